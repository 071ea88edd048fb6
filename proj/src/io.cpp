#include "cyclewarp/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace cyclewarp {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code dir_ec;
    fs::create_directories(path.parent_path(), dir_ec);
    if (dir_ec) throw IoError("cannot create " + path.parent_path().string() + ": " + dir_ec.message());
  }
  std::random_device rd;
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 failed");
  }
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) {
    ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------- PFM

std::string encode_pfm(const DepthMap& depth) {
  std::ostringstream ss;
  ss << "Pf\n" << depth.width() << " " << depth.height() << "\n-1.0\n";
  std::string out = ss.str();
  const size_t header = out.size();
  out.resize(header + depth.pixel_count() * sizeof(float));
  char* dst = out.data() + header;
  for (int y = depth.height() - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width(); ++x) {
      const float v = depth.valid(y, x) ? static_cast<float>(depth.at(y, x)) : 0.0f;
      std::memcpy(dst, &v, sizeof(float));
      dst += sizeof(float);
    }
  }
  return out;
}

DepthMap decode_pfm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  if (!in || (magic != "Pf" && magic != "PF") || width <= 0 || height <= 0) {
    throw IoError("malformed PFM header");
  }
  if (magic == "PF") throw IoError("3-channel PFM is not a depth map");
  if (scale >= 0.0) throw IoError("big-endian PFM is not supported");
  in.get();  // single whitespace after the scale line
  const auto offset = static_cast<size_t>(in.tellg());
  const size_t n = static_cast<size_t>(width) * height;
  if (bytes.size() < offset + n * sizeof(float)) throw IoError("truncated PFM payload");
  std::vector<double> depth(n);
  const char* src = bytes.data() + offset;
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      float v;
      std::memcpy(&v, src, sizeof(float));
      src += sizeof(float);
      depth[static_cast<size_t>(y) * width + x] = v;
    }
  }
  return DepthMap(height, width, std::move(depth));
}

void write_pfm(const fs::path& path, const DepthMap& depth) {
  write_file_atomic(path, encode_pfm(depth));
}
DepthMap read_pfm(const fs::path& path) { return decode_pfm(read_file(path)); }

// ---------------------------------------------------------------- PNG

namespace {

struct PngBuffer {
  std::string data;
  size_t pos = 0;
};

void png_write_cb(png_structp png, png_bytep bytes, png_size_t len) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  buf->data.append(reinterpret_cast<const char*>(bytes), len);
}
void png_flush_cb(png_structp) {}

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  if (buf->pos + len > buf->data.size()) png_error(png, "truncated PNG");
  std::memcpy(out, buf->data.data() + buf->pos, len);
  buf->pos += len;
}

// Row buffers are prepared by the caller so no C++ object with a destructor
// lives across setjmp.
bool png_encode_rows(PngBuffer* buf, int width, int height, int color_type,
                     std::vector<png_bytep>* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, buf, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct DecodedPng {
  png_uint_32 width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
};

bool png_decode(PngBuffer* buf, DecodedPng* out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, buf, png_read_cb);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  png_read_update_info(png, info);
  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->channels = png_get_channels(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out->pixels.resize(stride * out->height);
  out->rows.resize(out->height);
  for (png_uint_32 y = 0; y < out->height; ++y) out->rows[y] = out->pixels.data() + y * stride;
  png_read_image(png, out->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

std::string encode_png16(const Image& image) {
  const int w = image.width(), h = image.height(), c = image.channels();
  if (c != 1 && c != 3) throw MisuseError("encode_png16: images carry 1 or 3 channels");
  std::vector<unsigned char> pixels(static_cast<size_t>(w) * h * c * 2);
  for (size_t i = 0; i < image.data().size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    const auto q = static_cast<uint16_t>(std::lround(v * 65535.0));
    pixels[2 * i] = static_cast<unsigned char>(q >> 8);
    pixels[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * w * c * 2;
  PngBuffer buf;
  if (!png_encode_rows(&buf, w, h, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, &rows)) {
    throw IoError("PNG encoding failed");
  }
  return std::move(buf.data);
}

Image decode_png16(const std::string& bytes) {
  PngBuffer buf{bytes, 0};
  DecodedPng png;
  if (!png_decode(&buf, &png)) throw IoError("PNG decoding failed");
  const int c = png.channels;
  if (c != 1 && c != 3) throw IoError("unsupported PNG channel count");
  Image img = make_image(static_cast<int>(png.height), static_cast<int>(png.width), c);
  const size_t n = static_cast<size_t>(png.width) * png.height * c;
  for (size_t i = 0; i < n; ++i) {
    if (png.bit_depth == 16) {
      const unsigned v = (png.pixels[2 * i] << 8) | png.pixels[2 * i + 1];
      img.data()[i] = v / 65535.0;
    } else {
      img.data()[i] = png.pixels[i] / 255.0;
    }
  }
  return img;
}

void write_png16(const fs::path& path, const Image& image) {
  write_file_atomic(path, encode_png16(image));
}
Image read_png16(const fs::path& path) { return decode_png16(read_file(path)); }

// ---------------------------------------------------------------- checkpoints

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return a;
  }
  throw IoError("checkpoint has no array named '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json index;
  index["format"] = "cyclewarp-checkpoint";
  index["version"] = kCheckpointVersion;
  index["meta"] = ckpt.meta;
  index["arrays"] = json::array();
  uint64_t offset = 0;
  for (const NamedArray& a : ckpt.arrays) {
    int64_t count = 1;
    for (int64_t d : a.shape) count *= d;
    if (count != static_cast<int64_t>(a.data.size())) {
      throw MisuseError("checkpoint array '" + a.name + "' shape does not match its data");
    }
    index["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"dtype", "f64"}, {"offset", offset}});
    offset += a.data.size() * sizeof(double);
  }
  const std::string text = index.dump();
  std::string out = "CWCK";
  const uint32_t version = kCheckpointVersion;
  const uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += text;
  for (const NamedArray& a : ckpt.arrays) {
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr size_t kHeader = 4 + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < kHeader || bytes.compare(0, 4, "CWCK") != 0) {
    throw IoError("not a checkpoint file");
  }
  uint32_t version;
  uint64_t len;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  if (bytes.size() < kHeader + len) throw IoError("truncated checkpoint index");
  const json index = json::parse(bytes.substr(kHeader, len), nullptr, false);
  if (index.is_discarded() || !index.is_object()) throw IoError("checkpoint index is not JSON");
  if (index.value("format", "") != "cyclewarp-checkpoint") {
    throw IoError("checkpoint index carries the wrong format tag");
  }
  const size_t base = kHeader + len;
  Checkpoint ckpt;
  ckpt.meta = index.value("meta", json::object());
  for (const json& a : index.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<std::vector<int64_t>>();
    int64_t count = 1;
    for (int64_t d : arr.shape) count *= d;
    const size_t off = base + a.at("offset").get<size_t>();
    if (count < 0 || bytes.size() < off + static_cast<size_t>(count) * sizeof(double)) {
      throw IoError("truncated checkpoint array '" + arr.name + "'");
    }
    arr.data.resize(static_cast<size_t>(count));
    std::memcpy(arr.data.data(), bytes.data() + off, arr.data.size() * sizeof(double));
    ckpt.arrays.push_back(std::move(arr));
  }
  return ckpt;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}
Checkpoint read_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint state_to_checkpoint(const ParamState& s) {
  const ParamLayout& l = s.layout;
  const auto gh = static_cast<int64_t>(l.grid_height()), gw = static_cast<int64_t>(l.grid_width());
  const size_t g = l.grid_size();
  auto slice = [](const std::vector<double>& v, size_t off, size_t n) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(off),
                               v.begin() + static_cast<std::ptrdiff_t>(off + n));
  };
  Checkpoint c;
  for (const auto& [prefix, vec] :
       {std::pair<std::string, const std::vector<double>*>{"active", &s.active},
        {"ema", &s.ema}, {"velocity", &s.velocity}}) {
    c.arrays.push_back({prefix + ".log_depth.source", {gh, gw}, slice(*vec, 0, g)});
    c.arrays.push_back({prefix + ".log_depth.target", {gh, gw}, slice(*vec, g, g)});
    c.arrays.push_back({prefix + ".twist.target_to_source", {6},
                        slice(*vec, l.twist_offset(PairId::kTargetToSource), 6)});
    c.arrays.push_back({prefix + ".twist.source_to_target", {6},
                        slice(*vec, l.twist_offset(PairId::kSourceToTarget), 6)});
  }
  c.meta = {{"image_height", l.image_height()}, {"image_width", l.image_width()},
            {"stride", l.stride()}, {"step", s.step}, {"followup_step", s.followup_step},
            {"ema_updates", s.ema_updates}};
  return c;
}

ParamState checkpoint_to_state(const Checkpoint& c) {
  ParamState s;
  s.layout = ParamLayout(c.meta.at("image_height").get<int>(), c.meta.at("image_width").get<int>(),
                         c.meta.at("stride").get<int>());
  s.step = c.meta.value("step", int64_t{0});
  s.followup_step = c.meta.value("followup_step", int64_t{0});
  s.ema_updates = c.meta.value("ema_updates", int64_t{0});
  const size_t g = s.layout.grid_size();
  for (auto [prefix, vec] : {std::pair<std::string, std::vector<double>*>{"active", &s.active},
                             {"ema", &s.ema}, {"velocity", &s.velocity}}) {
    vec->clear();
    for (const char* part : {".log_depth.source", ".log_depth.target", ".twist.target_to_source",
                             ".twist.source_to_target"}) {
      const NamedArray& a = c.get(prefix + part);
      vec->insert(vec->end(), a.data.begin(), a.data.end());
    }
    if (vec->size() != s.layout.total() || c.get(prefix + ".log_depth.source").data.size() != g) {
      throw IoError("checkpoint arrays do not match the declared layout");
    }
  }
  return s;
}

// ---------------------------------------------------------------- JSON

json to_json(const Twist& t) { return t.to_array(); }

Twist twist_from_json(const json& j) { return Twist::from_array(j.get<std::array<double, 6>>()); }

json to_json(const PoseSE3& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back({p.rotation()(i, 0), p.rotation()(i, 1), p.rotation()(i, 2)});
  return {{"rotation", r},
          {"translation", {p.translation().x(), p.translation().y(), p.translation().z()}}};
}

PoseSE3 pose_from_json(const json& j) {
  Eigen::Matrix3d r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r(i, k) = j.at("rotation").at(i).at(k).get<double>();
  const auto t = j.at("translation").get<std::array<double, 3>>();
  return PoseSE3(r, {t[0], t[1], t[2]});
}

json to_json(const Intrinsics& k) { return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}}; }

Intrinsics intrinsics_from_json(const json& j) {
  return Intrinsics(j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                    j.at("cy").get<double>());
}

json to_json(const SceneSpec& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"surface", to_string(s.surface)},
          {"texture", to_string(s.texture)},
          {"baseline", to_json(s.baseline)},
          {"intrinsics", to_json(s.intrinsics)},
          {"nominal_depth", s.nominal_depth},
          {"texture_period_px", s.texture_period_px},
          {"seed", s.seed}};
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.surface = surface_from_string(j.at("surface").get<std::string>());
  s.texture = texture_from_string(j.at("texture").get<std::string>());
  s.baseline = twist_from_json(j.at("baseline"));
  s.intrinsics = intrinsics_from_json(j.at("intrinsics"));
  s.nominal_depth = j.at("nominal_depth").get<double>();
  s.texture_period_px = j.at("texture_period_px").get<double>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

// ---------------------------------------------------------------- scenes

json save_scene(const fs::path& dir, const SyntheticScene& scene) {
  fs::create_directories(dir);
  json hashes = json::object();
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_file_atomic(dir / name, bytes);
    hashes[name] = sha256_hex(bytes);
  };
  put("source.png", encode_png16(scene.source));
  put("target.png", encode_png16(scene.target));
  put("depth_source.pfm", encode_pfm(scene.gt_depth_source));
  put("depth_target.pfm", encode_pfm(scene.gt_depth_target));
  const json meta = {{"spec", to_json(scene.spec)},
                     {"intrinsics", to_json(scene.intrinsics)},
                     {"pose_target_to_source", to_json(scene.gt_pose_target_to_source)},
                     {"pose_source_to_target", to_json(scene.gt_pose_source_to_target)}};
  put("scene.json", meta.dump(2) + "\n");
  return hashes;
}

SyntheticScene load_scene(const fs::path& dir) {
  const json meta = json::parse(read_file(dir / "scene.json"));
  SyntheticScene s;
  s.spec = scene_spec_from_json(meta.at("spec"));
  s.intrinsics = intrinsics_from_json(meta.at("intrinsics"));
  s.gt_pose_target_to_source = pose_from_json(meta.at("pose_target_to_source"));
  s.gt_pose_source_to_target = pose_from_json(meta.at("pose_source_to_target"));
  s.source = read_png16(dir / "source.png");
  s.target = read_png16(dir / "target.png");
  s.gt_depth_source = read_pfm(dir / "depth_source.pfm");
  s.gt_depth_target = read_pfm(dir / "depth_target.pfm");
  if (!s.source.same_shape(s.target) || s.gt_depth_source.height() != s.source.height() ||
      s.gt_depth_source.width() != s.source.width()) {
    throw IoError("scene archive " + dir.string() + " has inconsistent raster shapes");
  }
  return s;
}

}  // namespace cyclewarp
