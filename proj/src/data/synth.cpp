#include "twins/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "twins/core/checkpoint.hpp"
#include "twins/core/rng.hpp"
#include "twins/data/png_io.hpp"

namespace fs = std::filesystem;

namespace twins {
namespace {

constexpr char kFieldMagic[4] = {'T', 'W', 'N', 'S'};

float quantize8(float x) {
  x = std::clamp(x, 0.0f, 1.0f);
  return std::round(x * 255.0f) / 255.0f;
}

struct Layer {
  bool background = false;
  bool ellipse = false;
  float cx = 0, cy = 0, rx = 0, ry = 0;  // shape params in target coords
  float depth = 1.0f;
  int dx = 0, dy = 0;  // source position of target content: p + (dx, dy)
  int cls = 0;
  // Texture on the extended domain [-margin, W+margin) x [-margin, H+margin).
  std::vector<float> tex;  // (3, He, We)
};

bool covers(const Layer& l, float x, float y) {
  if (l.background) return true;
  if (l.ellipse) {
    const float nx = (x - l.cx) / l.rx;
    const float ny = (y - l.cy) / l.ry;
    return nx * nx + ny * ny <= 1.0f;
  }
  return std::fabs(x - l.cx) <= l.rx && std::fabs(y - l.cy) <= l.ry;
}

// Repeated box blur, separable; cheap band limiting for noise textures.
void box_blur(std::vector<float>& img, int h, int w, int radius, int passes) {
  if (radius <= 0) return;
  std::vector<float> tmp(img.size());
  for (int pass = 0; pass < passes; ++pass) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        int count = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = x + k;
          if (xx < 0 || xx >= w) continue;
          acc += img[size_t(y) * w + size_t(xx)];
          ++count;
        }
        tmp[size_t(y) * w + size_t(x)] = acc / float(count);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        int count = 0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = y + k;
          if (yy < 0 || yy >= h) continue;
          acc += tmp[size_t(yy) * w + size_t(x)];
          ++count;
        }
        img[size_t(y) * w + size_t(x)] = acc / float(count);
      }
  }
}

void palette_color(int cls, float rgb[3]) {
  // Fixed, well separated tints so layer identity is visually recoverable.
  uint64_t h = uint64_t(cls) * 0x9e3779b97f4a7c15ULL + 0x12345;
  for (int c = 0; c < 3; ++c) {
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    rgb[c] = 0.2f + 0.6f * float((h >> 40) & 0xffff) / 65535.0f;
  }
}

}  // namespace

ImageCollection generate_scene(const SceneSpec& spec, CorrMode mode) {
  if (spec.height % 32 != 0 || spec.width % 32 != 0)
    throw ConfigError("scene size must be divisible by 32, got " +
                      std::to_string(spec.width) + "x" +
                      std::to_string(spec.height));
  if (spec.num_objects < 1)
    throw ConfigError("num_objects must be >= 1");
  if (spec.num_classes < 1)
    throw ConfigError("num_classes must be >= 1");
  if (!(spec.depth_min > 0.0f) || spec.depth_max < spec.depth_min)
    throw ConfigError("invalid depth range");
  if (spec.max_displacement < 0.0f)
    throw ConfigError("max_displacement must be >= 0");

  const int h = spec.height, w = spec.width;
  const int margin = int(std::ceil(spec.max_displacement)) + 1;
  const int he = h + 2 * margin, we = w + 2 * margin;
  Rng rng(spec.texture_seed);

  std::vector<Layer> layers(size_t(spec.num_objects));
  for (int j = 0; j < spec.num_objects; ++j) {
    Layer& l = layers[size_t(j)];
    l.cls = j % spec.num_classes;
    if (j == 0) {
      l.background = true;
      l.depth = spec.depth_max;
    } else {
      l.depth = float(rng.uniform(spec.depth_min, spec.depth_max));
      l.ellipse = rng.bernoulli(0.5);
      l.cx = float(rng.uniform(0.15, 0.85)) * float(w);
      l.cy = float(rng.uniform(0.15, 0.85)) * float(h);
      l.rx = float(rng.uniform(1.0 / 12.0, 1.0 / 4.0)) * float(w);
      l.ry = float(rng.uniform(1.0 / 12.0, 1.0 / 4.0)) * float(h);
    }
    const float mag = spec.max_displacement * spec.depth_min / l.depth;
    if (mode == CorrMode::kStereo) {
      // Content moves left in the source view by the disparity.
      l.dx = -int(std::lround(mag));
      l.dy = 0;
    } else {
      const double theta = rng.uniform(0.0, 6.283185307179586);
      l.dx = int(std::lround(mag * std::cos(theta)));
      l.dy = int(std::lround(mag * std::sin(theta)));
    }
    // Band-limited noise texture over the extended domain, tinted per class.
    float tint[3];
    palette_color(l.cls, tint);
    const int radius = rng.uniform_int(1, 3);
    const float contrast = float(rng.uniform(0.35, 0.7));
    std::vector<float> noise(size_t(he) * we);
    l.tex.assign(size_t(3) * he * we, 0.0f);
    for (int c = 0; c < 3; ++c) {
      for (auto& v : noise) v = float(rng.uniform());
      box_blur(noise, he, we, radius, 2);
      // Re-center and expand contrast around the tint.
      float mn = 1e9f, mx = -1e9f;
      for (float v : noise) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
      const float scale = mx > mn ? 1.0f / (mx - mn) : 0.0f;
      for (size_t i = 0; i < noise.size(); ++i) {
        const float centered = (noise[i] - mn) * scale - 0.5f;
        l.tex[size_t(c) * he * we + i] =
            quantize8(tint[c] + contrast * centered);
      }
    }
  }

  // Draw order: far to near; ties resolved by layer index (later on top).
  std::vector<int> order(layers.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return layers[size_t(a)].depth > layers[size_t(b)].depth;
  });

  auto visible_target = [&](int x, int y) {
    int win = 0;
    for (int j : order)
      if (covers(layers[size_t(j)], float(x), float(y))) win = j;
    return win;
  };
  // A source pixel s shows layer j when the layer covers s - (dx,dy) in the
  // target domain; nearest such layer wins (z-buffer over the source view).
  auto visible_source = [&](int x, int y) {
    int win = -1;
    for (int j : order) {
      const Layer& l = layers[size_t(j)];
      if (covers(l, float(x - l.dx), float(y - l.dy))) win = j;
    }
    return win;
  };

  ImageCollection out;
  out.mode = mode;
  out.target_image = Tensor::zeros({3, h, w});
  out.source_image = Tensor::zeros({3, h, w});
  out.gt_correspondence = Tensor::zeros({2, h, w});
  out.gt_validity = Tensor::zeros({1, h, w});
  out.gt_segmentation.h = h;
  out.gt_segmentation.w = w;
  out.gt_segmentation.ids.assign(size_t(h) * w, 0);

  auto tex_at = [&](const Layer& l, int c, int x, int y) {
    return l.tex[size_t(c) * he * we + size_t(y + margin) * we +
                 size_t(x + margin)];
  };

  std::vector<int> src_vis(size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int j = visible_source(x, y);
      src_vis[size_t(y) * w + x] = j;
      const Layer& l = layers[size_t(j)];
      for (int c = 0; c < 3; ++c)
        out.source_image.data()[(size_t(c) * h + y) * w + x] =
            tex_at(l, c, x - l.dx, y - l.dy);
    }

  float* corr = out.gt_correspondence.data();
  float* valid = out.gt_validity.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int j = visible_target(x, y);
      const Layer& l = layers[size_t(j)];
      out.gt_segmentation.at(y, x) = l.cls;
      for (int c = 0; c < 3; ++c)
        out.target_image.data()[(size_t(c) * h + y) * w + x] =
            tex_at(l, c, x, y);
      if (mode == CorrMode::kStereo) {
        corr[size_t(y) * w + x] = float(-l.dx);  // disparity, >= 0
        corr[size_t(h) * w + size_t(y) * w + x] = 0.0f;
      } else {
        corr[size_t(y) * w + x] = float(l.dx);
        corr[size_t(h) * w + size_t(y) * w + x] = float(l.dy);
      }
      const int qx = x + l.dx, qy = y + l.dy;
      const bool in_bounds = qx >= 0 && qx < w && qy >= 0 && qy < h;
      const bool unoccluded = in_bounds && src_vis[size_t(qy) * w + qx] == j;
      valid[size_t(y) * w + x] = unoccluded ? 1.0f : 0.0f;
    }
  return out;
}

void write_field_bin(const std::string& path, const Tensor& chw) {
  if (chw.rank() != 3) throw ContractError("write_field_bin expects (C,H,W)");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::vector<uint8_t> buf;
  buf.reserve(20 + size_t(4) * c * h * w);
  buf.insert(buf.end(), kFieldMagic, kFieldMagic + 4);
  write_u32_le(buf, 1u);
  write_u32_le(buf, uint32_t(h));
  write_u32_le(buf, uint32_t(w));
  write_u32_le(buf, uint32_t(c));
  const float* d = chw.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < c; ++ci) {
        uint32_t u;
        std::memcpy(&u, &d[(size_t(ci) * h + y) * w + x], 4);
        write_u32_le(buf, u);
      }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(buf.data()),
           std::streamsize(buf.size()));
  if (!os) throw IoError("write failed: " + path);
}

Tensor read_field_bin(const std::string& path, int expected_channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("missing file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw FormatError("truncated header: " + path);
  if (std::memcmp(buf.data(), kFieldMagic, 4) != 0)
    throw FormatError("bad magic in " + path);
  const uint32_t version = read_u32_le(buf.data() + 4);
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version) +
                      " in " + path);
  const uint32_t h = read_u32_le(buf.data() + 8);
  const uint32_t w = read_u32_le(buf.data() + 12);
  const uint32_t c = read_u32_le(buf.data() + 16);
  if (expected_channels > 0 && int(c) != expected_channels)
    throw FormatError("expected " + std::to_string(expected_channels) +
                      " channels, found " + std::to_string(c) + " in " + path);
  const size_t payload = size_t(4) * h * w * c;
  if (buf.size() != 20 + payload)
    throw FormatError("payload size mismatch in " + path);
  Tensor t = Tensor::zeros({int(c), int(h), int(w)});
  const uint8_t* p = buf.data() + 20;
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x)
      for (uint32_t ci = 0; ci < c; ++ci) {
        const uint32_t u = read_u32_le(p);
        p += 4;
        float f;
        std::memcpy(&f, &u, 4);
        t.data()[(size_t(ci) * h + y) * w + x] = f;
      }
  return t;
}

namespace {

PngImage to_png_rgb(const Tensor& img) {
  const int h = img.dim(1), w = img.dim(2);
  PngImage p;
  p.width = w;
  p.height = h;
  p.channels = 3;
  p.pixels.resize(size_t(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v =
            std::clamp(img.data()[(size_t(c) * h + y) * w + x], 0.0f, 1.0f);
        p.pixels[(size_t(y) * w + x) * 3 + size_t(c)] =
            uint8_t(std::lround(v * 255.0f));
      }
  return p;
}

Tensor from_png_rgb(const PngImage& p, const std::string& path) {
  if (p.channels != 3) throw FormatError("expected RGB png: " + path);
  Tensor t = Tensor::zeros({3, p.height, p.width});
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.data()[(size_t(c) * p.height + y) * p.width + x] =
            float(p.pixels[(size_t(y) * p.width + x) * 3 + size_t(c)]) /
            255.0f;
  return t;
}

}  // namespace

void write_collection(const ImageCollection& c, const std::string& dir) {
  fs::create_directories(dir);
  write_png(dir + "/target.png", to_png_rgb(c.target_image));
  write_png(dir + "/source.png", to_png_rgb(c.source_image));
  if (c.has_segmentation()) {
    PngImage seg;
    seg.width = c.gt_segmentation.w;
    seg.height = c.gt_segmentation.h;
    seg.channels = 1;
    seg.pixels.resize(size_t(seg.width) * seg.height);
    for (size_t i = 0; i < seg.pixels.size(); ++i) {
      const int32_t id = c.gt_segmentation.ids[i];
      if (id < 0 || id > 255)
        throw DataError("class id out of 8-bit range: " + std::to_string(id));
      seg.pixels[i] = uint8_t(id);
    }
    write_png(dir + "/seg.png", seg);
  }
  if (c.has_correspondence()) {
    write_field_bin(dir + "/corr.bin", c.gt_correspondence);
    if (c.gt_validity.defined())
      write_field_bin(dir + "/valid.bin", c.gt_validity);
  }
}

ImageCollection read_collection(const std::string& dir) {
  ImageCollection c;
  c.target_image = from_png_rgb(read_png(dir + "/target.png"),
                                dir + "/target.png");
  c.source_image = from_png_rgb(read_png(dir + "/source.png"),
                                dir + "/source.png");
  if (c.source_image.shape() != c.target_image.shape())
    throw FormatError("dimension mismatch between target.png and source.png in " +
                      dir);
  const int h = c.height(), w = c.width();
  if (fs::exists(dir + "/seg.png")) {
    PngImage seg = read_png(dir + "/seg.png");
    if (seg.channels != 1)
      throw FormatError("seg.png must be single channel: " + dir);
    if (seg.width != w || seg.height != h)
      throw FormatError("dimension mismatch in " + dir + "/seg.png");
    c.gt_segmentation.h = h;
    c.gt_segmentation.w = w;
    c.gt_segmentation.ids.resize(size_t(h) * w);
    for (size_t i = 0; i < c.gt_segmentation.ids.size(); ++i)
      c.gt_segmentation.ids[i] = seg.pixels[i];
  }
  if (fs::exists(dir + "/corr.bin")) {
    c.gt_correspondence = read_field_bin(dir + "/corr.bin", 2);
    if (c.gt_correspondence.dim(1) != h || c.gt_correspondence.dim(2) != w)
      throw FormatError("dimension mismatch in " + dir + "/corr.bin");
    if (fs::exists(dir + "/valid.bin")) {
      c.gt_validity = read_field_bin(dir + "/valid.bin", 1);
      if (c.gt_validity.dim(1) != h || c.gt_validity.dim(2) != w)
        throw FormatError("dimension mismatch in " + dir + "/valid.bin");
      for (float v : c.gt_validity.vec())
        if (v != 0.0f && v != 1.0f)
          throw FormatError("valid.bin values must be 0 or 1: " + dir);
    } else {
      c.gt_validity = Tensor::full({1, h, w}, 1.0f);
    }
    // Stereo is stored with an identically zero second component.
    bool all_zero_v = true;
    const float* vband = c.gt_correspondence.data() + size_t(h) * w;
    for (int64_t i = 0; i < int64_t(h) * w && all_zero_v; ++i)
      all_zero_v = vband[i] == 0.0f;
    c.mode = all_zero_v ? CorrMode::kStereo : CorrMode::kFlow;
  }
  return c;
}

std::vector<std::string> list_collections(const std::string& split_dir) {
  if (!fs::exists(split_dir))
    throw IoError("dataset split not found: " + split_dir);
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(split_dir))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace twins
