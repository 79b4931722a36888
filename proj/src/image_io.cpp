#include "shapeformer/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <png.h>

#include "shapeformer/errors.hpp"

namespace shapeformer {

namespace {

// Rows of each glyph, 3 bits per row, most significant bit on the left.
const std::map<char, std::array<std::uint8_t, 5>>& font() {
    static const std::map<char, std::array<std::uint8_t, 5>> f{
        {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
        {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 2, 2}},
        {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}},
        {'C', {3, 4, 4, 4, 3}}, {'D', {6, 5, 5, 5, 6}}, {'E', {7, 4, 6, 4, 7}}, {'F', {7, 4, 6, 4, 4}},
        {'G', {3, 4, 5, 5, 3}}, {'H', {5, 5, 7, 5, 5}}, {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 2}},
        {'K', {5, 5, 6, 5, 5}}, {'L', {4, 4, 4, 4, 7}}, {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}},
        {'O', {2, 5, 5, 5, 2}}, {'P', {6, 5, 6, 4, 4}}, {'Q', {2, 5, 5, 6, 3}}, {'R', {6, 5, 6, 5, 5}},
        {'S', {3, 4, 2, 1, 6}}, {'T', {7, 2, 2, 2, 2}}, {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}},
        {'W', {5, 5, 7, 7, 5}}, {'X', {5, 5, 2, 5, 5}}, {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}},
        {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}}, {'_', {0, 0, 0, 0, 7}}, {':', {0, 2, 0, 2, 0}},
        {'/', {1, 1, 2, 4, 4}}, {'(', {1, 2, 2, 2, 1}}, {')', {4, 2, 2, 2, 4}}, {'=', {0, 7, 0, 7, 0}},
        {'+', {0, 2, 7, 2, 0}}, {'%', {5, 1, 2, 4, 5}}, {',', {0, 0, 0, 2, 4}}, {' ', {0, 0, 0, 0, 0}},
    };
    return f;
}

std::string format_tick(double v) {
    std::ostringstream s;
    const double a = std::abs(v);
    if (a != 0.0 && (a < 0.01 || a >= 10000)) {
        s << std::scientific << std::setprecision(1) << v;
    } else {
        s << std::fixed << std::setprecision(a < 1 ? 2 : (a < 100 ? 1 : 0)) << v;
    }
    auto out = s.str();
    std::transform(out.begin(), out.end(), out.begin(), [](char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

struct Frame {
    int left, top, right, bottom;
    double lo, hi;
    int y_of(double v) const {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        return bottom - static_cast<int>(std::lround(t * (bottom - top)));
    }
};

// Axes box, horizontal grid with value ticks and a title; returns the frame.
Frame draw_axes(Image& img, const std::string& title, double lo, double hi, int legend_rows) {
    const Rgb ink{40, 40, 40}, grid{225, 225, 225};
    Frame f{56, 28, img.width() - 16, img.height() - 28 - 12 * legend_rows, lo, hi};
    img.draw_text((img.width() - text_width(title, 2)) / 2, 8, title, ink, 2);
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        const int y = f.y_of(v);
        img.draw_line(f.left, y, f.right, y, grid);
        const auto label = format_tick(v);
        img.draw_text(f.left - 6 - text_width(label), y - 2, label, ink);
    }
    img.draw_line(f.left, f.top, f.left, f.bottom, ink);
    img.draw_line(f.left, f.bottom, f.right, f.bottom, ink);
    return f;
}

void draw_legend(Image& img, const std::vector<Series>& series, int y0) {
    int x = 56;
    int y = y0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const int w = 14 + text_width(series[i].name, 1) + 16;
        if (x + w > img.width() - 8) {
            x = 56;
            y += 12;
        }
        img.fill_rect(x, y, x + 10, y + 6, series_color(i));
        img.draw_text(x + 14, y + 1, series[i].name, {40, 40, 40});
        x += w;
    }
}

int legend_rows(const std::vector<Series>& series, int width) {
    int rows = 1, x = 56;
    for (const auto& s : series) {
        const int w = 14 + text_width(s.name, 1) + 16;
        if (x + w > width - 8) {
            ++rows;
            x = 56;
        }
        x += w;
    }
    return rows;
}

} // namespace

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw ShapeError("image dimensions must be positive");
    data_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < data_.size(); i += 3) std::copy(fill.begin(), fill.end(), data_.begin() + i);
}

Rgb Image::at(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {data_.at(i), data_.at(i + 1), data_.at(i + 2)};
}

void Image::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const auto i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    std::copy(c.begin(), c.end(), data_.begin() + i);
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(height_, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(width_, x1); ++x) set(x, y, c);
}

void Image::draw_line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Image::blit(const Image& src, int x, int y) {
    for (int r = 0; r < src.height(); ++r)
        for (int c = 0; c < src.width(); ++c) set(x + c, y + r, src.at(c, r));
}

int Image::draw_text(int x, int y, const std::string& text, Rgb c, int scale) {
    int cx = x;
    for (char ch : text) {
        const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != font().end()) {
            for (int r = 0; r < 5; ++r)
                for (int b = 0; b < 3; ++b)
                    if (it->second[r] & (4 >> b)) fill_rect(cx + b * scale, y + r * scale, cx + (b + 1) * scale, y + (r + 1) * scale, c);
        }
        cx += 4 * scale;
    }
    return cx - x;
}

int text_width(const std::string& text, int scale) { return static_cast<int>(text.size()) * 4 * scale; }

void write_png(const std::filesystem::path& path, const Image& image) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()), static_cast<png_uint_32>(image.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto px = image.pixels();
    for (int y = 0; y < image.height(); ++y) {
        png_write_row(png, const_cast<png_bytep>(px.data() + static_cast<std::size_t>(y) * image.width() * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw IoError("cannot finish " + path.string());
}

std::array<int, 2> png_size(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("missing image " + path.string());
    std::array<unsigned char, 24> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    static constexpr unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (in.gcount() != 24 || !std::equal(sig, sig + 8, head.begin()) ||
        !std::equal(head.begin() + 12, head.begin() + 16, "IHDR")) {
        throw ParseError(path.string() + " is not a PNG file");
    }
    auto be32 = [&](int off) {
        return static_cast<int>((head[off] << 24) | (head[off + 1] << 16) | (head[off + 2] << 8) | head[off + 3]);
    };
    return {be32(16), be32(20)};
}

Rgb gray(double v) {
    const auto g = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    return {g, g, g};
}

Rgb heat(double v) {
    // Piecewise-linear dark blue -> magenta -> orange -> pale yellow.
    static constexpr std::array<std::array<double, 3>, 4> stops{{{20, 20, 90}, {170, 40, 130}, {245, 130, 40}, {250, 240, 160}}};
    const double t = std::clamp(v, 0.0, 1.0) * 3.0;
    const int i = std::min(2, static_cast<int>(t));
    const double f = t - i;
    Rgb c{};
    for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
    return c;
}

Image value_image(std::span<const double> values, int h, int w, int scale, bool heatmap) {
    if (values.size() != static_cast<std::size_t>(h) * w) throw ShapeError("value_image: size mismatch");
    Image img(w * scale, h * scale);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = values[static_cast<std::size_t>(y) * w + x];
            img.fill_rect(x * scale, y * scale, (x + 1) * scale, (y + 1) * scale, heatmap ? heat(v) : gray(v));
        }
    }
    return img;
}

Rgb series_color(std::size_t i) {
    static constexpr std::array<Rgb, 8> palette{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                                 {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}}};
    return palette[i % palette.size()];
}

Image line_plot(const std::string& title, const std::vector<Series>& series, int width, int height) {
    Image img(width, height);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        n = std::max(n, s.y.size());
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    const int rows = legend_rows(series, width);
    const Frame f = draw_axes(img, title, std::max(0.0, lo - pad) == 0.0 && lo >= 0 ? 0.0 : lo - pad, hi + pad, rows);
    auto x_of = [&](std::size_t i) {
        return f.left + (n > 1 ? static_cast<int>(std::lround(static_cast<double>(i) * (f.right - f.left) / (n - 1))) : 0);
    };
    const std::size_t step = std::max<std::size_t>(1, n / 10);
    for (std::size_t i = 0; i < n; i += step) {
        const auto label = std::to_string(i + 1);
        img.draw_line(x_of(i), f.bottom, x_of(i), f.bottom + 3, {40, 40, 40});
        img.draw_text(x_of(i) - text_width(label) / 2, f.bottom + 6, label, {40, 40, 40});
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& y = series[k].y;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (!std::isfinite(y[i])) continue;
            const int px = x_of(i), py = f.y_of(y[i]);
            img.fill_rect(px - 1, py - 1, px + 2, py + 2, series_color(k));
            if (i + 1 < y.size() && std::isfinite(y[i + 1])) {
                img.draw_line(px, py, x_of(i + 1), f.y_of(y[i + 1]), series_color(k));
            }
        }
    }
    draw_legend(img, series, f.bottom + 16);
    return img;
}

Image bar_chart(const std::string& title, const std::vector<std::string>& groups, const std::vector<Series>& series,
                int width, int height) {
    Image img(width, height);
    double hi = 0.0;
    for (const auto& s : series)
        for (double v : s.y)
            if (std::isfinite(v)) hi = std::max(hi, v);
    if (hi <= 0) hi = 1.0;
    const int rows = legend_rows(series, width);
    const Frame f = draw_axes(img, title, 0.0, hi * 1.1, rows);
    const int ng = std::max<int>(1, static_cast<int>(groups.size()));
    const double gw = static_cast<double>(f.right - f.left) / ng;
    const int ns = std::max<int>(1, static_cast<int>(series.size()));
    const double bw = gw * 0.8 / ns;
    for (int g = 0; g < ng; ++g) {
        const int gx = f.left + static_cast<int>(g * gw);
        if (g < static_cast<int>(groups.size())) {
            img.draw_text(gx + static_cast<int>(gw / 2) - text_width(groups[g]) / 2, f.bottom + 6, groups[g], {40, 40, 40});
        }
        for (int s = 0; s < static_cast<int>(series.size()); ++s) {
            if (g >= static_cast<int>(series[s].y.size())) continue;
            const double v = series[s].y[g];
            if (!std::isfinite(v)) continue;
            const int x0 = gx + static_cast<int>(gw * 0.1 + s * bw);
            img.fill_rect(x0, f.y_of(v), x0 + std::max(1, static_cast<int>(bw) - 1), f.bottom, series_color(s));
        }
    }
    draw_legend(img, series, f.bottom + 16);
    return img;
}

} // namespace shapeformer
