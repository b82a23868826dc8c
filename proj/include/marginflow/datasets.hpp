#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marginflow/net.hpp"

namespace mf {

// Declarative dataset recipe. `source` selects the generator:
//   gaussian-blobs   two seeded Gaussian clusters separated along the first
//                    axis by `gap` (rejection keeps every point on its side,
//                    so gap > 0 is linearly separable by construction)
//   two-point-1d     {(x1, -1), (x2, +1)}, both inputs positive
//   ring-vs-center   ball of +1 points surrounded by a -1 ring; not linearly
//                    separable
//   csv              load from `path` with labels in `label_col`;
//                    `positive_class` maps to +1, everything else to -1
// When `bias` is set a constant 1 coordinate is appended last.
struct DataSpec {
    std::string source = "gaussian-blobs";
    int d = 2;
    int n = 20;
    double gap = 2.0;
    std::uint64_t seed = 0;
    bool bias = false;
    double x1 = 1.0, x2 = 2.0;          // two-point-1d
    std::string path;                    // csv
    std::string label_col;               // csv: header name or numeric index
    std::string positive_class = "1";    // csv
    std::vector<int> rows;               // csv: optional row subset (0-based)
};

// Builds the dataset; throws ConfigError/ParseError/DomainError on bad specs.
Dataset make_dataset(const DataSpec& spec);

// Writes features then a final label column "y" as CSV with a header row.
// Numbers are printed with 17 significant digits so reruns are byte-stable.
void write_dataset_csv(const Dataset& data, const std::string& path);
std::string dataset_to_csv(const Dataset& data);

// Loads a CSV produced by write_dataset_csv or any numeric CSV with a label
// column. Errors carry line numbers.
Dataset load_csv(const std::string& path, const std::string& label_col,
                 const std::string& positive_class, const std::vector<int>& rows = {});

}  // namespace mf
