#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentfair/rng.hpp"
#include "latentfair/tensor.hpp"

namespace latentfair {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Attribute {
    std::string name;
    std::vector<std::string> values;

    std::size_t index_of(const std::string& value) const;
    bool operator==(const Attribute&) const = default;
};

// Ordered protected-attribute schema, e.g. gender -> {male, female}.
class AttributeSchema {
public:
    AttributeSchema() = default;
    explicit AttributeSchema(std::vector<Attribute> attributes);

    const std::vector<Attribute>& attributes() const noexcept { return attributes_; }
    std::size_t size() const noexcept { return attributes_.size(); }
    std::optional<std::size_t> find(const std::string& name) const;
    // Throws DataError("unknown attribute ...") when absent.
    std::size_t index_of(const std::string& name) const;
    const Attribute& at(const std::string& name) const { return attributes_[index_of(name)]; }

    // Cartesian product attribute "a-b" whose values are "va-vb" in row-major order.
    Attribute product(const std::string& a, const std::string& b) const;

    void validate() const;
    bool operator==(const AttributeSchema&) const = default;

private:
    std::vector<Attribute> attributes_;
};

struct Resolution {
    std::size_t channels = 3;
    std::size_t height = 128;
    std::size_t width = 128;

    Shape shape() const { return {channels, height, width}; }
    bool operator==(const Resolution&) const = default;
};

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& s);

struct Record {
    std::string path;  // relative to the manifest's directory unless absolute
    std::size_t expression = 0;
    std::vector<std::size_t> attrs;  // value index per schema attribute, schema order
    bool operator==(const Record&) const = default;
};

struct DatasetManifest {
    AttributeSchema schema;
    Resolution resolution;
    std::size_t num_classes = 7;
    Split split = Split::train;
    std::vector<Record> records;
    std::filesystem::path base_dir;  // not serialized

    std::filesystem::path image_path(const Record& r) const;
    void validate() const;
    // Sorts records lexicographically by path.
    void canonicalize();
};

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// One sub-manifest per value of `attribute`, in schema value order.
std::vector<DatasetManifest> partition_by_attribute(const DatasetManifest& manifest, const std::string& attribute);

struct ImageSample {
    Tensor pixels;  // [C, H, W] in [0, 1]
    std::size_t expression = 0;
    std::vector<std::size_t> attrs;
};

// 8-bit PNG, gray or RGB.
Tensor read_png(const std::filesystem::path& path);
void write_png(const Tensor& pixels, const std::filesystem::path& path);

ImageSample load_sample(const DatasetManifest& manifest, std::size_t index);
std::vector<ImageSample> load_samples(const DatasetManifest& manifest);

struct AugmentDraw {
    double flip_draw = 1.0;  // mirrored when < 0.5
    double angle_deg = 0.0;
};

constexpr double kMaxRotationDeg = 15.0;

AugmentDraw draw_augmentation(Rng& rng);
ImageSample augment(const ImageSample& sample, const AugmentDraw& draw);
ImageSample augment(const ImageSample& sample, Rng& rng);
// Bilinear rotation about the image centre with edge replication.
Tensor rotate_image(const Tensor& pixels, double angle_deg);
Tensor mirror_image(const Tensor& pixels);

struct SynthConfig {
    std::size_t train_samples = 2000;
    std::size_t val_samples = 500;
    std::size_t test_samples = 1000;
    Resolution resolution{3, 16, 16};
    std::size_t num_classes = 4;
    std::size_t num_attr_values = 2;
    double rho = 0.9;
    double noise = 0.1;
    std::uint64_t seed = 0;
    std::string attribute = "group";
    // Independent auxiliary attribute with no visual cue; 0 disables it.
    std::size_t aux_attr_values = 0;
    std::string aux_attribute = "aux";
    // Cue strengths: tint radius for expression, background spread for the attribute.
    double expression_contrast = 0.2;
    double attribute_contrast = 0.3;
    // Std-dev (radians) of the per-sample hue offset; controls class overlap.
    double expression_jitter = 0.6;

    void validate() const;
    bool operator==(const SynthConfig&) const = default;
};

// Label-aligned attribute value: class 0 -> value 0, class c -> min(c, K_attr - 1).
std::size_t stereotype_value(std::size_t expression, std::size_t num_attr_values);

struct SynthDataset {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

// Renders one sample's pixels; exposed for tests.
Tensor render_synthetic(const SynthConfig& config, std::size_t expression, std::size_t attr_value, Rng& rng);

// Writes <out>/{train,val,test}/*.png, <out>/{train,val,test}.json. Deterministic in config.seed.
SynthDataset synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

// Attribute-balanced batches: every batch holds an as-equal-as-possible count
// from each non-empty attribute group. Groups are drawn without replacement
// and wrap around (with a reshuffle) when exhausted, so minorities are
// oversampled. An epoch has ceil(N / batch_size) batches.
class BalancedBatcher {
public:
    BalancedBatcher(const DatasetManifest& manifest, const std::string& attribute, std::size_t batch_size);
    BalancedBatcher(std::vector<std::size_t> group_of_record, std::size_t num_groups, std::size_t batch_size);

    std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }
    std::size_t active_groups() const noexcept { return groups_.size(); }
    std::vector<std::vector<std::size_t>> epoch(Rng& rng);

private:
    struct Group {
        std::vector<std::size_t> members;
        std::size_t cursor = 0;
    };
    std::vector<Group> groups_;
    std::size_t batch_size_;
    std::size_t batches_per_epoch_;
};

// Plain shuffled batches covering every record once; last batch may be short.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch_size, Rng& rng);

}  // namespace latentfair
