#include "latentfair/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace latentfair {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::size_t Attribute::index_of(const std::string& value) const {
    auto it = std::find(values.begin(), values.end(), value);
    if (it == values.end()) throw DataError("attribute '" + name + "' has no value '" + value + "'");
    return static_cast<std::size_t>(it - values.begin());
}

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes) : attributes_(std::move(attributes)) { validate(); }

std::optional<std::size_t> AttributeSchema::find(const std::string& name) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i)
        if (attributes_[i].name == name) return i;
    return std::nullopt;
}

std::size_t AttributeSchema::index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw DataError("unknown attribute '" + name + "'");
}

Attribute AttributeSchema::product(const std::string& a, const std::string& b) const {
    const Attribute& first = at(a);
    const Attribute& second = at(b);
    Attribute out{first.name + "-" + second.name, {}};
    for (const auto& va : first.values)
        for (const auto& vb : second.values) out.values.push_back(va + "-" + vb);
    return out;
}

void AttributeSchema::validate() const {
    std::set<std::string> names;
    for (const auto& attr : attributes_) {
        if (attr.name.empty()) throw DataError("schema violation: empty attribute name");
        if (!names.insert(attr.name).second) throw DataError("schema violation: duplicate attribute '" + attr.name + "'");
        if (attr.values.size() < 2)
            throw DataError("schema violation: attribute '" + attr.name + "' needs at least 2 values");
        std::set<std::string> seen;
        for (const auto& v : attr.values) {
            if (v.empty()) throw DataError("schema violation: attribute '" + attr.name + "' has an empty value");
            if (!seen.insert(v).second)
                throw DataError("schema violation: attribute '" + attr.name + "' lists value '" + v + "' twice");
        }
    }
}

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

fs::path DatasetManifest::image_path(const Record& r) const {
    fs::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
}

void DatasetManifest::validate() const {
    schema.validate();
    if (num_classes < 1) throw DataError("num_classes must be positive");
    if (resolution.channels == 0 || resolution.height == 0 || resolution.width == 0)
        throw DataError("resolution must be positive");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Record& r = records[i];
        const std::string where = "record " + std::to_string(i) + " ('" + r.path + "')";
        if (r.path.empty()) throw DataError(where + ": field 'path' is empty");
        if (r.expression >= num_classes)
            throw DataError(where + ": field 'expression' label out of range (" + std::to_string(r.expression) +
                            " >= num_classes " + std::to_string(num_classes) + ")");
        if (r.attrs.size() != schema.size()) throw DataError(where + ": field 'attrs' does not cover the schema");
        for (std::size_t a = 0; a < r.attrs.size(); ++a)
            if (r.attrs[a] >= schema.attributes()[a].values.size())
                throw DataError(where + ": field 'attrs." + schema.attributes()[a].name + "' label out of range");
    }
}

void DatasetManifest::canonicalize() {
    std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) { return a.path < b.path; });
}

std::string serialize_manifest(const DatasetManifest& m) {
    ojson doc;
    ojson schema = ojson::array();
    for (const auto& attr : m.schema.attributes()) {
        ojson a;
        a["name"] = attr.name;
        a["values"] = attr.values;
        schema.push_back(a);
    }
    doc["schema"] = schema;
    doc["resolution"] = {m.resolution.channels, m.resolution.height, m.resolution.width};
    doc["num_classes"] = m.num_classes;
    doc["split"] = to_string(m.split);
    ojson records = ojson::array();
    for (const auto& r : m.records) {
        ojson rec;
        rec["path"] = r.path;
        rec["expression"] = r.expression;
        ojson attrs = ojson::object();
        for (std::size_t a = 0; a < m.schema.size(); ++a) {
            const auto& attr = m.schema.attributes()[a];
            attrs[attr.name] = attr.values.at(r.attrs.at(a));
        }
        rec["attrs"] = attrs;
        records.push_back(rec);
    }
    doc["records"] = records;
    return doc.dump(2) + "\n";
}

namespace {

template <typename T>
T field(const ojson& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw DataError(where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
    ojson doc;
    try {
        doc = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("manifest is not valid JSON: ") + e.what());
    }
    static const std::set<std::string> known{"schema", "resolution", "num_classes", "split", "records"};
    for (const auto& [key, _] : doc.items())
        if (!known.contains(key)) throw DataError("manifest: unknown field '" + key + "'");

    DatasetManifest m;
    m.base_dir = base_dir;
    std::vector<Attribute> attrs;
    const auto schema = field<ojson>(doc, "schema", "manifest");
    if (!schema.is_array()) throw DataError("manifest: field 'schema' must be a list");
    for (const auto& a : schema) {
        attrs.push_back({field<std::string>(a, "name", "schema entry"),
                         field<std::vector<std::string>>(a, "values", "schema entry")});
    }
    m.schema = AttributeSchema(std::move(attrs));
    const auto res = field<std::vector<std::size_t>>(doc, "resolution", "manifest");
    if (res.size() != 3) throw DataError("manifest: field 'resolution' must be [channels, height, width]");
    m.resolution = {res[0], res[1], res[2]};
    m.num_classes = field<std::size_t>(doc, "num_classes", "manifest");
    m.split = parse_split(field<std::string>(doc, "split", "manifest"));

    const auto records = field<ojson>(doc, "records", "manifest");
    if (!records.is_array()) throw DataError("manifest: field 'records' must be a list");
    std::size_t i = 0;
    for (const auto& rec : records) {
        const std::string where = "record " + std::to_string(i++);
        Record r;
        r.path = field<std::string>(rec, "path", where);
        const auto expr = field<long long>(rec, "expression", where + " ('" + r.path + "')");
        if (expr < 0 || static_cast<std::size_t>(expr) >= m.num_classes)
            throw DataError(where + " ('" + r.path + "'): field 'expression' label out of range (" +
                            std::to_string(expr) + " with num_classes " + std::to_string(m.num_classes) + ")");
        r.expression = static_cast<std::size_t>(expr);
        const auto attr_obj = field<ojson>(rec, "attrs", where);
        for (const auto& attr : m.schema.attributes()) {
            if (!attr_obj.contains(attr.name))
                throw DataError(where + " ('" + r.path + "'): field 'attrs' missing attribute '" + attr.name + "'");
            const auto value = field<std::string>(attr_obj, attr.name.c_str(), where + " attrs");
            auto it = std::find(attr.values.begin(), attr.values.end(), value);
            if (it == attr.values.end())
                throw DataError(where + " ('" + r.path + "'): field 'attrs." + attr.name + "' label out of range ('" +
                                value + "')");
            r.attrs.push_back(static_cast<std::size_t>(it - attr.values.begin()));
        }
        if (attr_obj.size() != m.schema.size())
            throw DataError(where + " ('" + r.path + "'): field 'attrs' has attributes not in the schema");
        m.records.push_back(std::move(r));
    }
    m.canonicalize();
    m.validate();
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path.parent_path());
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    out << serialize_manifest(manifest);
    if (!out) throw DataError("failed writing manifest '" + path.string() + "'");
}

std::vector<DatasetManifest> partition_by_attribute(const DatasetManifest& manifest, const std::string& attribute) {
    const std::size_t a = manifest.schema.index_of(attribute);
    const std::size_t k = manifest.schema.attributes()[a].values.size();
    std::vector<DatasetManifest> parts(k, manifest);
    for (auto& p : parts) p.records.clear();
    for (const auto& r : manifest.records) parts[r.attrs[a]].records.push_back(r);
    return parts;
}

Tensor read_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot read image '" + path.string() + "': " + image.message);
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const std::size_t channels = gray ? 1 : 3;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot decode image '" + path.string() + "': " + msg);
    }
    const std::size_t h = image.height, w = image.width;
    Tensor out({channels, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c)
                out[(c * h + y) * w + x] = buffer[(y * w + x) * channels + c] / 255.0;
    return out;
}

void write_png(const Tensor& pixels, const fs::path& path) {
    if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3))
        throw DataError("write_png expects [1|3, H, W] pixels, got " + shape_str(pixels.shape()));
    const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    std::vector<png_byte> buffer(c * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v = std::clamp(pixels[(ch * h + y) * w + x], 0.0, 1.0);
                buffer[(y * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0));
            }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw DataError("cannot write image '" + path.string() + "': " + image.message);
}

ImageSample load_sample(const DatasetManifest& manifest, std::size_t index) {
    const Record& r = manifest.records.at(index);
    ImageSample s{read_png(manifest.image_path(r)), r.expression, r.attrs};
    if (s.pixels.shape() != manifest.resolution.shape())
        throw DataError("image '" + r.path + "' has shape " + shape_str(s.pixels.shape()) + ", manifest declares " +
                        shape_str(manifest.resolution.shape()));
    return s;
}

std::vector<ImageSample> load_samples(const DatasetManifest& manifest) {
    std::vector<ImageSample> out;
    out.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) out.push_back(load_sample(manifest, i));
    return out;
}

AugmentDraw draw_augmentation(Rng& rng) {
    AugmentDraw d;
    d.flip_draw = rng.uniform();
    d.angle_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
    return d;
}

Tensor mirror_image(const Tensor& pixels) {
    const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    Tensor out(pixels.shape());
    for (std::size_t p = 0; p < c * h; ++p)
        for (std::size_t x = 0; x < w; ++x) out[p * w + x] = pixels[p * w + (w - 1 - x)];
    return out;
}

Tensor rotate_image(const Tensor& pixels, double angle_deg) {
    if (angle_deg == 0.0) return pixels;
    const std::size_t c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
    const double theta = angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
    Tensor out(pixels.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            // inverse mapping: output pixel samples the source rotated by -theta
            const double sx = std::clamp(cs * dx + sn * dy + cx, 0.0, static_cast<double>(w - 1));
            const double sy = std::clamp(-sn * dx + cs * dy + cy, 0.0, static_cast<double>(h - 1));
            const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
            const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double* p = pixels.raw() + ch * h * w;
                const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                const double bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[(ch * h + y) * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    return out;
}

ImageSample augment(const ImageSample& sample, const AugmentDraw& draw) {
    ImageSample out = sample;
    if (draw.flip_draw < 0.5) out.pixels = mirror_image(out.pixels);
    out.pixels = rotate_image(out.pixels, draw.angle_deg);
    return out;
}

ImageSample augment(const ImageSample& sample, Rng& rng) { return augment(sample, draw_augmentation(rng)); }

void SynthConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw DataError("synth config field '" + field + "': " + why);
    };
    if (!(rho >= 0.0 && rho <= 1.0)) fail("rho", "must lie in [0, 1]");
    if (num_classes < 2) fail("num_classes", "must be >= 2");
    if (num_attr_values < 2) fail("num_attr_values", "must be >= 2");
    if (!(noise >= 0.0)) fail("noise", "must be >= 0");
    if (aux_attr_values == 1) fail("aux_attr_values", "must be 0 (disabled) or >= 2");
    if (resolution.channels != 3) fail("resolution", "synthetic images are RGB; channels must be 3");
    if (!(expression_jitter >= 0.0)) fail("expression_jitter", "must be >= 0");
    if (resolution.height < 4 || resolution.width < 4) fail("resolution", "height and width must be >= 4");
    if (train_samples == 0 || test_samples == 0) fail("train_samples", "splits must be non-empty");
    if (attribute.empty()) fail("attribute", "must be non-empty");
    if (aux_attr_values > 0 && aux_attribute == attribute) fail("aux_attribute", "must differ from attribute");
}

std::size_t stereotype_value(std::size_t expression, std::size_t num_attr_values) {
    return std::min(expression, num_attr_values - 1);
}

Tensor render_synthetic(const SynthConfig& cfg, std::size_t expression, std::size_t attr_value, Rng& rng) {
    const std::size_t c = cfg.resolution.channels, h = cfg.resolution.height, w = cfg.resolution.width;
    // Attribute cue: gray background level centred on 0.5.
    const double band = static_cast<double>(attr_value) / static_cast<double>(cfg.num_attr_values - 1) - 0.5;
    const double background = 0.5 + cfg.attribute_contrast * band;
    // Expression cue: a central patch tinted along an equal-luminance hue circle,
    // one hue per class plus per-sample jitter so neighbouring classes overlap.
    // The tint has zero channel mean, so brightness carries only the attribute.
    const double hue = 2.0 * std::numbers::pi * static_cast<double>(expression) / static_cast<double>(cfg.num_classes) +
                       cfg.expression_jitter * rng.normal();
    const double a = std::cos(hue) * cfg.expression_contrast, b = std::sin(hue) * cfg.expression_contrast;
    const double tint[3] = {a / std::sqrt(2.0) + b / std::sqrt(6.0), -a / std::sqrt(2.0) + b / std::sqrt(6.0),
                            -2.0 * b / std::sqrt(6.0)};
    const std::size_t y0 = h / 8, y1 = h - h / 8, x0 = w / 8, x1 = w - w / 8;
    Tensor out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double v = background;
                if (y >= y0 && y < y1 && x >= x0 && x < x1) v += tint[ch];
                if (cfg.noise > 0.0) v += cfg.noise * rng.normal();
                out[(ch * h + y) * w + x] = std::clamp(v, 0.0, 1.0);
            }
    return out;
}

namespace {

DatasetManifest generate_split(const SynthConfig& cfg, Split split, std::size_t count, double rho,
                               const fs::path& out_dir) {
    std::vector<Attribute> attrs;
    Attribute primary{cfg.attribute, {}};
    for (std::size_t v = 0; v < cfg.num_attr_values; ++v) primary.values.push_back("v" + std::to_string(v));
    attrs.push_back(primary);
    if (cfg.aux_attr_values > 0) {
        Attribute aux{cfg.aux_attribute, {}};
        for (std::size_t v = 0; v < cfg.aux_attr_values; ++v) aux.values.push_back("u" + std::to_string(v));
        attrs.push_back(aux);
    }

    DatasetManifest m;
    m.schema = AttributeSchema(std::move(attrs));
    m.resolution = cfg.resolution;
    m.num_classes = cfg.num_classes;
    m.split = split;
    m.base_dir = out_dir;

    const std::string dir = to_string(split);
    fs::create_directories(out_dir / dir);
    const std::uint64_t split_tag = static_cast<std::uint64_t>(split) + 1;
    for (std::size_t i = 0; i < count; ++i) {
        // Per-record stream: records are independent of one another and of generation order.
        Rng rng(Rng::derive(cfg.seed, (split_tag << 40) + i));
        const std::size_t expression = rng.below(cfg.num_classes);
        const std::size_t stereo = stereotype_value(expression, cfg.num_attr_values);
        std::size_t attr = stereo;
        if (rng.uniform() >= rho) {
            attr = rng.below(cfg.num_attr_values - 1);
            if (attr >= stereo) ++attr;
        }
        Record r;
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        r.path = dir + "/" + name;
        r.expression = expression;
        r.attrs.push_back(attr);
        if (cfg.aux_attr_values > 0) r.attrs.push_back(rng.below(cfg.aux_attr_values));
        write_png(render_synthetic(cfg, expression, attr, rng), out_dir / r.path);
        m.records.push_back(std::move(r));
    }
    m.canonicalize();
    write_manifest(m, out_dir / (dir + ".json"));
    return m;
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& config, const fs::path& out_dir) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw DataError("unwritable output directory '" + out_dir.string() + "'");
    {
        const fs::path probe = out_dir / ".write_probe";
        std::ofstream p(probe);
        if (!p) throw DataError("unwritable output directory '" + out_dir.string() + "'");
        p.close();
        fs::remove(probe, ec);
    }
    const double unbiased = 1.0 / static_cast<double>(config.num_attr_values);
    SynthDataset ds;
    ds.train = generate_split(config, Split::train, config.train_samples, config.rho, out_dir);
    ds.val = generate_split(config, Split::val, config.val_samples, unbiased, out_dir);
    ds.test = generate_split(config, Split::test, config.test_samples, unbiased, out_dir);
    return ds;
}

BalancedBatcher::BalancedBatcher(const DatasetManifest& manifest, const std::string& attribute,
                                 std::size_t batch_size)
    : BalancedBatcher(
          [&] {
              const std::size_t a = manifest.schema.index_of(attribute);
              std::vector<std::size_t> g;
              for (const auto& r : manifest.records) g.push_back(r.attrs[a]);
              return g;
          }(),
          manifest.schema.at(attribute).values.size(), batch_size) {}

BalancedBatcher::BalancedBatcher(std::vector<std::size_t> group_of_record, std::size_t num_groups,
                                 std::size_t batch_size)
    : batch_size_(batch_size) {
    std::vector<Group> all(num_groups);
    for (std::size_t i = 0; i < group_of_record.size(); ++i) all.at(group_of_record[i]).members.push_back(i);
    for (std::size_t g = 0; g < all.size(); ++g) {
        if (all[g].members.empty()) {
            std::cerr << "warning: attribute group " << g << " has no records; skipped from balancing\n";
            continue;
        }
        groups_.push_back(std::move(all[g]));
    }
    if (groups_.empty()) throw DataError("balanced batches: no non-empty attribute groups");
    if (batch_size < groups_.size())
        throw DataError("balanced batches: batch_size " + std::to_string(batch_size) +
                        " is smaller than the number of attribute groups (" + std::to_string(groups_.size()) + ")");
    batches_per_epoch_ = (group_of_record.size() + batch_size - 1) / batch_size;
}

std::vector<std::vector<std::size_t>> BalancedBatcher::epoch(Rng& rng) {
    for (auto& g : groups_) {
        rng.shuffle(g.members);
        g.cursor = 0;
    }
    const std::size_t k = groups_.size();
    const std::size_t base = batch_size_ / k, extra = batch_size_ % k;
    std::vector<std::vector<std::size_t>> batches(batches_per_epoch_);
    for (std::size_t b = 0; b < batches_per_epoch_; ++b) {
        auto& batch = batches[b];
        batch.reserve(batch_size_);
        for (std::size_t gi = 0; gi < k; ++gi) {
            // remainder slots rotate across batches
            const bool bonus = ((gi + k - b % k) % k) < extra;
            const std::size_t quota = base + (bonus ? 1 : 0);
            Group& g = groups_[gi];
            for (std::size_t q = 0; q < quota; ++q) {
                if (g.cursor == g.members.size()) {
                    rng.shuffle(g.members);
                    g.cursor = 0;
                }
                batch.push_back(g.members[g.cursor++]);
            }
        }
    }
    return batches;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw DataError("batch_size must be positive");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size)
        out.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(n, i + batch_size)));
    return out;
}

}  // namespace latentfair
