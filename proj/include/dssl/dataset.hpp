#pragma once

#include "dssl/core.hpp"
#include "dssl/image.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dssl::data {

/// Checksum mismatch or unreadable archive.
class DatasetError : public Error {
public:
    using Error::Error;
};

struct Dataset {
    std::string name;
    std::vector<ImageSample> images;
    std::vector<int> labels;
    int num_classes = 10;

    std::size_t size() const { return images.size(); }
    /// First `n` samples (or all of them), ids preserved.
    Dataset head(std::size_t n) const;
};

struct DatasetSplits {
    Dataset train;
    Dataset test;
};

/// 10 shape classes drawn with random placement, colours and noise; every pixel
/// is quantised to 8 bits so the set serialises losslessly.
struct SyntheticConfig {
    std::uint64_t seed = 0;
    int train_size = 1000;
    int test_size = 200;
    int image_size = 32;
    bool class_colour = true;  // foreground hue carries a per-class cue
};
DatasetSplits synthetic_tiny(const SyntheticConfig& cfg = {});
std::string_view synthetic_class_name(int label);

/// Fixed binary layout: magic, counts, labels, 8-bit CHW pixels.
std::vector<std::uint8_t> serialize(const Dataset& ds);
Dataset deserialize(const std::vector<std::uint8_t>& bytes, const std::string& name);

/// Writes `<path>` and `<path>.sha256` via temp files and rename.
void write_cache(const std::string& path, const Dataset& ds);
/// Loads a cache written by write_cache; nullopt if absent, DatasetError if the checksum fails.
std::optional<Dataset> read_cache(const std::string& path, const std::string& name);

inline constexpr const char* kCifar10Md5 = "c32a1d4ab5d03f1284b67883e8d87530";

struct IngestOptions {
    std::uint64_t seed = 0;             // synthetic-tiny
    SyntheticConfig synthetic{};        // seed above overrides synthetic.seed
    std::string archive;                // cifar10: path to cifar-10-binary.tar.gz
    std::string expected_md5 = kCifar10Md5;
    std::size_t train_limit = 0;        // 0 = full split
    std::size_t test_limit = 0;
};

/// Parses the CIFAR-10 binary tarball (gzip + tar) into 50k/10k splits.
DatasetSplits read_cifar10_archive(const std::string& archive_path, const std::string& expected_md5);

/// Materialises a verified cache under `cache_dir` on first use and loads it afterwards.
/// name ∈ {synthetic-tiny, cifar10}. Nothing is cached when verification fails.
DatasetSplits ingest_dataset(const std::string& name, const std::string& cache_dir, const IngestOptions& opts = {});

/// $DSSL_CACHE_DIR, else ./.dssl_cache.
std::string default_cache_dir();

}  // namespace dssl::data
