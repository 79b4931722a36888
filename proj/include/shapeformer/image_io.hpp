#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace shapeformer {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major.
class Image {
public:
    Image() = default;
    Image(int width, int height, Rgb fill = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }
    std::span<const std::uint8_t> pixels() const { return data_; }

    Rgb at(int x, int y) const;
    // Out-of-range writes are clipped.
    void set(int x, int y, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
    void draw_line(int x0, int y0, int x1, int y1, Rgb c);
    void blit(const Image& src, int x, int y);
    // Upper-case 3x5 bitmap font; unknown glyphs draw as blanks. Returns the
    // advance in pixels.
    int draw_text(int x, int y, const std::string& text, Rgb c, int scale = 1);

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

int text_width(const std::string& text, int scale = 1);

// Writes an 8-bit RGB PNG; throws IoError.
void write_png(const std::filesystem::path& path, const Image& image);
// Width and height from the IHDR chunk; throws MissingArtifact / ParseError.
std::array<int, 2> png_size(const std::filesystem::path& path);

// Gray ramp (0 -> black, 1 -> white) or a blue-to-yellow heat ramp.
Rgb gray(double v);
Rgb heat(double v);

// h x w values in [0, 1] drawn with nearest upsampling by `scale`.
Image value_image(std::span<const double> values, int h, int w, int scale, bool heatmap = false);

struct Series {
    std::string name;
    std::vector<double> y;
};

// Lines over a shared x index with axis ticks and a legend.
Image line_plot(const std::string& title, const std::vector<Series>& series, int width = 640,
                int height = 400);

// Grouped bars: one group per label, one bar per series inside each group.
Image bar_chart(const std::string& title, const std::vector<std::string>& groups,
                const std::vector<Series>& series, int width = 720, int height = 400);

// Palette used by both plot kinds.
Rgb series_color(std::size_t i);

} // namespace shapeformer
