#include "uvet/image_io.hpp"

#include <cmath>
#include <fstream>

namespace uvet {

namespace {

// next token, skipping whitespace and '#' comment lines
std::string pnm_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("pnm: truncated header");
    return tok;
}

std::size_t pnm_number(std::istream& in, const char* what) {
    const std::string tok = pnm_token(in);
    std::size_t v = 0;
    for (char ch : tok) {
        if (ch < '0' || ch > '9') throw FormatError(std::string("pnm: bad ") + what + " '" + tok + "'");
        v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    std::size_t channels = 0;
    if (m0 == 'P' && m1 == '5') channels = 1;
    else if (m0 == 'P' && m1 == '6') channels = 3;
    else throw FormatError("pnm: unsupported magic in " + path + " (want P5 or P6)");

    const std::size_t width = pnm_number(in, "width");
    const std::size_t height = pnm_number(in, "height");
    const std::size_t maxval = pnm_number(in, "maxval");
    if (width == 0 || height == 0) throw FormatError("pnm: zero dimension in " + path);
    if (maxval == 0 || maxval > 255) throw FormatError("pnm: only 8-bit maxval<=255 supported");

    const std::size_t n = width * height * channels;
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("pnm: truncated pixel data in " + path);

    Tensor img({height, width, channels});
    for (std::size_t i = 0; i < n; ++i) img.at(i) = static_cast<double>(raw[i]);
    return img;
}

void write_pnm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3) throw DimensionError("write_pnm: image must be HxWxC");
    const std::size_t h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
    const char* magic = nullptr;
    if (c == 1) magic = "P5";
    else if (c == 3) magic = "P6";
    else throw DimensionError("write_pnm: channels must be 1 or 3");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << magic << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        double v = std::floor(image.at(i) + 0.5);
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        raw[i] = static_cast<unsigned char>(v);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write: " + path);
}

void write_pgm_unit(const std::string& path, const std::vector<double>& values,
                    std::size_t rows, std::size_t cols) {
    if (values.size() != rows * cols) throw DimensionError("write_pgm_unit: size mismatch");
    Tensor img({rows, cols, 1});
    for (std::size_t i = 0; i < values.size(); ++i) {
        img.at(i) = std::floor(values[i] * 255.0 + 0.5);  // half-up
    }
    write_pnm(path, img);
}

}  // namespace uvet
