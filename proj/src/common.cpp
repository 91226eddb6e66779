#include "screenlab/common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace screenlab {

std::string format_hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_columns(const std::string& path, const std::vector<std::string>& comments,
                   const std::vector<Column>& cols) {
    require(!cols.empty(), Error::Code::invalid_argument, "write_columns: no columns");
    const std::size_t n = cols.front().values.size();
    for (const auto& c : cols)
        require(c.values.size() == n, Error::Code::invalid_argument,
                "write_columns: ragged column " + c.name);

    std::ofstream out(path);
    require(out.good(), Error::Code::io_error, "cannot open for write: " + path);
    for (const auto& c : comments) out << "# " << c << "\n";
    out << "#";
    for (const auto& c : cols) out << " " << c.name;
    out << "\n";
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (j) out << " ";
            out << format_full(cols[j].values[i]);
        }
        out << "\n";
    }
    require(out.good(), Error::Code::io_error, "write failed: " + path);
}

std::vector<Column> read_columns(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Error::Code::io_error, "cannot open for read: " + path);
    std::vector<Column> cols;
    std::string line;
    std::string header;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            header = line;  // last comment line before data carries column names
            continue;
        }
        if (cols.empty()) {
            std::istringstream hs(header.substr(1));
            std::string name;
            while (hs >> name) cols.push_back({name, {}});
            require(!cols.empty(), Error::Code::io_error, "no column header in " + path);
        }
        std::istringstream ls(line);
        for (auto& c : cols) {
            double v;
            require(static_cast<bool>(ls >> v), Error::Code::io_error,
                    "short/non-numeric row in " + path);
            c.values.push_back(v);
        }
    }
    return cols;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Error::Code::io_error, "cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), Error::Code::io_error, "cannot open for write: " + path);
    out << content;
    require(out.good(), Error::Code::io_error, "write failed: " + path);
}

}  // namespace screenlab
