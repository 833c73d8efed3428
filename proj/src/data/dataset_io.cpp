#include "uda/data/dataset_io.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace uda::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::atomic<std::size_t> g_target_annotations{0};

std::vector<std::uint8_t> read_bytes(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(what, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError(path.string(), "write failed");
}

// Cursor over a PPM header: magic, width, height, maxval separated by
// whitespace, '#' comments allowed, then exactly one whitespace byte.
class PpmHeader {
 public:
  PpmHeader(const std::vector<std::uint8_t>& b, const std::string& what) : b_(b), what_(what) {}

  std::size_t number(const char* field) {
    skip_space();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_++] - '0');
      if (++digits > 9) throw DatasetError(what_, std::string(field) + " too large");
    }
    if (digits == 0) throw DatasetError(what_, std::string("missing ") + field);
    return v;
  }
  void expect_magic() {
    if (b_.size() < 2 || b_[0] != 'P' || b_[1] != '6') throw DatasetError(what_, "not a binary PPM (P6)");
    pos_ = 2;
  }
  std::size_t end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw DatasetError(what_, "malformed header");
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  const std::vector<std::uint8_t>& b_;
  const std::string& what_;
  std::size_t pos_ = 0;
};

std::string field(const std::string& path) { return "manifest.json: " + path; }

template <typename V>
V get_as(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw DatasetError(field(path + "." + key), "missing");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw DatasetError(field(path + "." + key), "wrong type");
  }
}

BBox parse_bbox(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); }))
    throw DatasetError(field(path), "expected [x_min, y_min, x_max, y_max]");
  return BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  require_image(image, "encode_ppm");
  const std::size_t h = image_height(image), w = image_width(image);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * h * w);
  const auto px = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(px[(c * h + y) * w + x], 0.0f, 1.0f);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
      }
  return out;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  PpmHeader hdr(bytes, what);
  hdr.expect_magic();
  const std::size_t w = hdr.number("width");
  const std::size_t h = hdr.number("height");
  const std::size_t maxval = hdr.number("maxval");
  if (w == 0 || h == 0) throw DatasetError(what, "empty image");
  if (maxval != 255) throw DatasetError(what, "only 8-bit PPM (maxval 255) is supported");
  const std::size_t start = hdr.end_of_header();
  if (bytes.size() - start != 3 * w * h)
    throw DatasetError(what, "expected " + std::to_string(3 * w * h) + " pixel bytes, found " +
                                 std::to_string(bytes.size() - start));
  std::vector<float> px(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        px[(c * h + y) * w + x] = static_cast<float>(bytes[start + (y * w + x) * 3 + c]) / 255.0f;
  return Image(Shape{3, h, w}, std::move(px));
}

void write_ppm(const fs::path& path, const Image& image) { write_bytes(path, encode_ppm(image)); }

Image read_ppm(const fs::path& path) { return decode_ppm(read_bytes(path, path.string()), path.string()); }

void save_dataset(const DomainDataset& ds, const fs::path& dir) {
  validate(ds);
  if (!ds.annotations_loaded) throw DatasetError(ds.domain_name, "refusing to save a dataset loaded images-only");
  fs::create_directories(dir / "images");
  json records = json::array();
  for (const auto& r : ds.records) {
    const std::string file = "images/" + r.image_id + ".ppm";
    write_ppm(dir / file, r.image);
    json anns = json::array();
    for (const auto& a : r.annotations)
      anns.push_back({{"class", a.class_name}, {"bbox", {a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max}}});
    json rec = {{"image_id", r.image_id},
                {"file", file},
                {"domain_tag", std::string(to_string(r.domain_tag))},
                {"annotations", std::move(anns)}};
    if (r.provenance) rec["provenance"] = *r.provenance;
    records.push_back(std::move(rec));
  }
  const json manifest = {{"domain_name", ds.domain_name}, {"classes", ds.class_table}, {"records", std::move(records)}};
  const std::string text = manifest.dump(1) + "\n";
  write_bytes(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

DomainDataset load_dataset(const fs::path& dir, LoadParts parts) {
  const auto raw = read_bytes(dir / "manifest.json", "manifest.json");
  json m;
  try {
    m = json::parse(raw.begin(), raw.end());
  } catch (const json::parse_error& e) {
    // e.what() carries "line L, column C"
    throw DatasetError("manifest.json", e.what());
  }
  if (!m.is_object()) throw DatasetError("manifest.json", "top level must be an object");

  DomainDataset ds;
  ds.domain_name = get_as<std::string>(m, "domain_name", "");
  ds.class_table = get_as<std::vector<std::string>>(m, "classes", "");
  ds.annotations_loaded = parts == LoadParts::everything;
  if (!m.contains("records") || !m["records"].is_array()) throw DatasetError(field("records"), "missing or not an array");

  const auto& recs = m["records"];
  ds.records.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const std::string path = "records[" + std::to_string(i) + "]";
    const auto& jr = recs[i];
    ImageRecord r;
    r.image_id = get_as<std::string>(jr, "image_id", path);
    try {
      r.domain_tag = parse_domain_tag(get_as<std::string>(jr, "domain_tag", path));
    } catch (const DatasetError& e) {
      throw DatasetError(field(path + ".domain_tag"), e.message());
    }
    if (jr.contains("provenance")) r.provenance = get_as<std::string>(jr, "provenance", path);
    const auto file = get_as<std::string>(jr, "file", path);
    const fs::path image_path = dir / file;
    if (!fs::exists(image_path))
      throw DatasetError(field(path), "image file '" + file + "' for record '" + r.image_id + "' not found");
    r.image = decode_ppm(read_bytes(image_path, r.image_id), "image '" + r.image_id + "'");

    if (parts == LoadParts::everything) {
      if (!jr.contains("annotations") || !jr["annotations"].is_array())
        throw DatasetError(field(path + ".annotations"), "missing or not an array");
      const auto& ja = jr["annotations"];
      for (std::size_t k = 0; k < ja.size(); ++k) {
        const std::string apath = path + ".annotations[" + std::to_string(k) + "]";
        Annotation a;
        a.class_name = get_as<std::string>(ja[k], "class", apath);
        const auto it = std::find(ds.class_table.begin(), ds.class_table.end(), a.class_name);
        if (it == ds.class_table.end()) throw DatasetError(field(apath + ".class"), "unknown class '" + a.class_name + "'");
        a.class_id = static_cast<int>(it - ds.class_table.begin());
        if (!ja[k].contains("bbox")) throw DatasetError(field(apath + ".bbox"), "missing");
        a.bbox = parse_bbox(ja[k]["bbox"], apath + ".bbox");
        if (!within_bounds(a.bbox, image_width(r.image), image_height(r.image)))
          throw DatasetError(field(apath + ".bbox"), "box outside image '" + r.image_id + "'");
        r.annotations.push_back(std::move(a));
        if (r.domain_tag == DomainTag::target) g_target_annotations.fetch_add(1, std::memory_order_relaxed);
      }
    }
    ds.records.push_back(std::move(r));
  }
  try {
    validate(ds);
  } catch (const DatasetError& e) {
    throw DatasetError(field(e.context()), e.message());
  }
  return ds;
}

std::size_t target_annotations_deserialized() { return g_target_annotations.load(std::memory_order_relaxed); }
void reset_target_annotation_counter() { g_target_annotations.store(0, std::memory_order_relaxed); }

}  // namespace uda::data
