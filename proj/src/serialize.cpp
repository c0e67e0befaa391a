#include "uqr/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace uqr {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_tensor(std::ostream& os, const Shape& shape, const std::vector<double>& data) {
    os << "shape:";
    for (int d : shape) os << ' ' << d;
    os << '\n';
    // One line per leading-dimension slice for readability.
    std::int64_t row = shape.empty() ? 1 : numel(shape) / std::max(shape[0], 1);
    if (row <= 0) row = 1;
    for (size_t i = 0; i < data.size(); ++i) {
        os << format_double(data[i]);
        os << (((i + 1) % row == 0) ? '\n' : ' ');
    }
    if (!data.empty() && data.size() % row != 0) os << '\n';
}

void read_tensor(std::istream& is, Shape& shape, std::vector<double>& data) {
    std::string tag;
    if (!(is >> tag) || tag != "shape:") {
        throw ParseError("tensor header must start with 'shape:'");
    }
    shape.clear();
    std::string line;
    std::getline(is, line);
    std::istringstream hs(line);
    int d;
    while (hs >> d) {
        if (d <= 0) throw ParseError("tensor dimension must be positive");
        shape.push_back(d);
    }
    std::int64_t n = numel(shape);
    data.resize(n);
    for (std::int64_t i = 0; i < n; ++i) {
        if (!(is >> data[i])) throw ParseError("tensor file ended before all values were read");
    }
}

void save_tensor(const std::string& path, const Shape& shape, const std::vector<double>& data) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_tensor(os, shape, data);
    if (!os) throw IoError("failed writing " + path);
}

std::pair<Shape, std::vector<double>> load_tensor(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    Shape shape;
    std::vector<double> data;
    read_tensor(is, shape, data);
    return {shape, data};
}

} // namespace uqr
