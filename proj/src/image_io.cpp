#include "adsy/image_io.hpp"

#include <algorithm>
#include <fstream>

namespace adsy {

void write_pgm16(const Tensor<float>& image, const std::filesystem::path& path, float lo,
                 float hi) {
  if (image.ndim() != 2) throw ShapeError("write_pgm16: expected [H,W], got " + shape_str(image.shape()));
  const std::int64_t h = image.dim(0), w = image.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << w << " " << h << "\n65535\n";
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::int64_t i = 0; i < h * w; ++i) {
    const float norm = std::clamp((image[i] - lo) / span, 0.0f, 1.0f);
    const std::uint16_t v = static_cast<std::uint16_t>(norm * 65535.0f + 0.5f);
    const unsigned char bytes[2] = {static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace adsy
