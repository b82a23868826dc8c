#include "marginflow/datasets.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mf {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Dataset append_bias(Dataset data) {
    Matrix x(data.x.rows(), data.x.cols() + 1);
    x.leftCols(data.x.cols()) = data.x;
    x.col(data.x.cols()).setOnes();
    data.x = std::move(x);
    return data;
}

Dataset gaussian_blobs(int d, int n, double gap, std::uint64_t seed) {
    if (d < 1) throw ConfigError("data.d: must be >= 1");
    if (n < 1) throw ConfigError("data.n: must be >= 1");
    if (!(gap > 0.0)) throw ConfigError("data.gap: must be > 0");
    Rng rng(seed);
    Dataset data;
    data.x.resize(n, d);
    data.y.resize(n);
    const int n_pos = (n + 1) / 2;
    for (int i = 0; i < n; ++i) {
        const double label = i < n_pos ? 1.0 : -1.0;
        const double center = label * gap / 2.0;
        // Resample until the point stays on its class side of the first axis
        // with at least the half-gap to spare; this makes separability a
        // construction property rather than a tail event.
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw DomainError("blob rejection sampling stalled");
            Vector p(d);
            for (int j = 0; j < d; ++j) p(j) = rng.gaussian();
            p(0) += 2.0 * center;
            if (label * p(0) >= gap / 2.0) {
                data.x.row(i) = p.transpose();
                break;
            }
        }
        data.y(i) = label;
    }
    return data;
}

Dataset two_point_1d(double x1, double x2) {
    if (!(x1 > 0.0) || !(x2 > 0.0)) throw ConfigError("data.x1/x2: must be positive");
    Dataset data;
    data.x.resize(2, 1);
    data.y.resize(2);
    data.x(0, 0) = x1;
    data.y(0) = -1.0;
    data.x(1, 0) = x2;
    data.y(1) = 1.0;
    return data;
}

Dataset ring_vs_center(int d, int n, std::uint64_t seed) {
    if (d < 2) throw ConfigError("data.d: ring-vs-center needs d >= 2");
    if (n < 4) throw ConfigError("data.n: must be >= 4");
    Rng rng(seed);
    Dataset data;
    data.x.resize(n, d);
    data.y.resize(n);
    const int n_center = n / 2;
    for (int i = 0; i < n; ++i) {
        Vector u(d);
        for (int j = 0; j < d; ++j) u(j) = rng.gaussian();
        const double nrm = u.norm();
        if (!(nrm > 0.0)) { --i; continue; }
        u /= nrm;
        if (i < n_center) {
            // Center cloud: radius in [0, 1).
            data.x.row(i) = (std::pow(rng.uniform01(), 1.0 / d) * u).transpose();
            data.y(i) = 1.0;
        } else {
            // Surrounding ring: radius in [2.5, 3.5).
            data.x.row(i) = (rng.uniform(2.5, 3.5) * u).transpose();
            data.y(i) = -1.0;
        }
    }
    return data;
}

}  // namespace

Dataset make_dataset(const DataSpec& spec) {
    Dataset data;
    if (spec.source == "gaussian-blobs") {
        data = gaussian_blobs(spec.d, spec.n, spec.gap, spec.seed);
    } else if (spec.source == "two-point-1d") {
        data = two_point_1d(spec.x1, spec.x2);
    } else if (spec.source == "ring-vs-center") {
        data = ring_vs_center(spec.d, spec.n, spec.seed);
    } else if (spec.source == "csv") {
        if (spec.path.empty()) throw ConfigError("data.path: required for csv source");
        if (spec.label_col.empty())
            throw ConfigError("data.label_col: required for csv source");
        data = load_csv(spec.path, spec.label_col, spec.positive_class, spec.rows);
    } else {
        throw ConfigError("data.source: unknown source '" + spec.source + "'");
    }
    if (spec.bias) data = append_bias(data);
    data.validate();
    return data;
}

std::string dataset_to_csv(const Dataset& data) {
    std::ostringstream os;
    for (int j = 0; j < data.dim(); ++j) os << "x" << (j + 1) << ",";
    os << "y\n";
    for (int i = 0; i < data.n(); ++i) {
        for (int j = 0; j < data.dim(); ++j) os << fmt17(data.x(i, j)) << ",";
        os << (data.y(i) > 0 ? "1" : "-1") << "\n";
    }
    return os.str();
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << dataset_to_csv(data);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    for (std::string& f : fields) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.erase(f.begin());
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.pop_back();
    }
    return fields;
}

bool parse_double(const std::string& s, double* out) {
    if (s.empty()) return false;
    char* end = nullptr;
    *out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& label_col,
                 const std::string& positive_class, const std::vector<int>& rows) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");

    std::vector<std::vector<std::string>> records;
    std::vector<int> record_lines;
    std::string line;
    int lineno = 0;
    std::vector<std::string> header;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields = split_csv_line(line);
        if (lineno == 1) {
            // Header detection: any field that is not a number.
            bool numeric = true;
            double tmp;
            for (const std::string& f : fields)
                if (!parse_double(f, &tmp)) numeric = false;
            if (!numeric) {
                header = fields;
                have_header = true;
                continue;
            }
        }
        if (!records.empty() && fields.size() != records.front().size())
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row (" +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(records.front().size()) + ")");
        records.push_back(std::move(fields));
        record_lines.push_back(lineno);
    }
    if (records.empty()) throw ParseError(path + ": no data rows");
    const int ncols = static_cast<int>(records.front().size());
    if (have_header && static_cast<int>(header.size()) != ncols)
        throw ParseError(path + ": header width differs from data width");

    // Resolve the label column: name with a header, otherwise numeric index;
    // empty means the last column.
    int label_idx = ncols - 1;
    if (!label_col.empty()) {
        bool found = false;
        if (have_header) {
            for (int j = 0; j < ncols; ++j)
                if (header[j] == label_col) {
                    label_idx = j;
                    found = true;
                    break;
                }
        }
        if (!found) {
            double idx;
            if (parse_double(label_col, &idx) && idx >= 0 && idx < ncols) {
                label_idx = static_cast<int>(idx);
            } else {
                throw ParseError(path + ": label column '" + label_col + "' not found");
            }
        }
    }

    std::vector<int> use_rows = rows;
    if (use_rows.empty()) {
        use_rows.resize(records.size());
        for (size_t i = 0; i < records.size(); ++i) use_rows[i] = static_cast<int>(i);
    } else {
        for (int r : use_rows)
            if (r < 0 || r >= static_cast<int>(records.size()))
                throw ParseError(path + ": row subset index " + std::to_string(r) +
                                 " out of range");
    }

    Dataset data;
    data.x.resize(static_cast<int>(use_rows.size()), ncols - 1);
    data.y.resize(static_cast<int>(use_rows.size()));
    for (size_t k = 0; k < use_rows.size(); ++k) {
        const std::vector<std::string>& rec = records[use_rows[k]];
        int col = 0;
        for (int j = 0; j < ncols; ++j) {
            if (j == label_idx) continue;
            double v;
            if (!parse_double(rec[j], &v))
                throw ParseError(path + ":" + std::to_string(record_lines[use_rows[k]]) +
                                 ": non-numeric feature '" + rec[j] + "' in column " +
                                 std::to_string(j));
            data.x(static_cast<int>(k), col++) = v;
        }
        data.y(static_cast<int>(k)) = (rec[label_idx] == positive_class) ? 1.0 : -1.0;
    }
    return data;
}

}  // namespace mf
