#include "dssl/dataset.hpp"

#include "dssl/core.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <tuple>

namespace fs = std::filesystem;

namespace dssl::data {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'S', 'L', 'D', 'S', '1', '\n'};
constexpr int kSuper = 4;  // supersampling per axis

bool inside(int label, double u, double v) {
    const double au = std::abs(u), av = std::abs(v);
    const double box = std::max(au, av);
    switch (label) {
        case 0: return u * u + v * v <= 1.0;
        case 1: return box <= 0.8;
        case 2: return v <= 0.7 && v >= -0.95 && au <= 0.95 * (v + 0.95) / 1.65;
        case 3: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.55 * 0.55;
        }
        case 4: return (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95);
        case 5: return box <= 0.9 && static_cast<int>(std::floor((v + 0.9) / 0.36)) % 2 == 0;
        case 6: return box <= 0.9 && static_cast<int>(std::floor((u + 0.9) / 0.36)) % 2 == 0;
        case 7: return au + av <= 1.0;
        case 8: return box <= 0.9 && ((u > 0) != (v > 0));
        case 9: return box <= 0.9 && (std::abs(u - v) <= 0.42 || std::abs(u + v) <= 0.42);
        default: return false;
    }
}

constexpr std::array<const char*, 10> kNames = {"disk",           "square",       "triangle", "ring",    "plus",
                                                "horizontal_bars", "vertical_bars", "diamond",  "checker", "cross"};

double luma3(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

std::array<double, 3> random_colour(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

std::array<double, 3> hsv(double h, double s, double v) {
    h = (h - std::floor(h)) * 6.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

// Saturated foreground whose hue sits near the class's slot on the colour wheel;
// washed-out background of any hue.
std::pair<std::array<double, 3>, std::array<double, 3>> class_colours(int label, Rng& rng) {
    const auto fg = hsv(label / 10.0 + rng.uniform(-0.04, 0.04), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0));
    std::array<double, 3> bg{};
    for (int tries = 0; tries < 64; ++tries) {
        bg = hsv(rng.uniform(), rng.uniform(0.0, 0.3), rng.bernoulli(0.5) ? rng.uniform(0.0, 0.3) : rng.uniform(0.7, 1.0));
        if (std::abs(luma3(fg) - luma3(bg)) >= 0.2) break;
    }
    return {fg, bg};
}

float quantise(double x) {
    const double q = std::round(std::clamp(x, 0.0, 1.0) * 255.0);
    return static_cast<float>(q / 255.0);
}

ImageSample render(int label, int size, std::int64_t id, bool class_colour, Rng& rng) {
    ImageSample img(size, size, id);
    const double half = size / 2.0;
    const double cx = half + rng.uniform(-0.125, 0.125) * size;
    const double cy = half + rng.uniform(-0.125, 0.125) * size;
    const double radius = rng.uniform(0.25, 0.375) * size;
    const double theta = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);

    std::array<double, 3> fg{}, bg{};
    if (class_colour) {
        std::tie(fg, bg) = class_colours(label, rng);
    } else {
        bg = random_colour(rng);
        fg = random_colour(rng);
        for (int tries = 0; std::abs(luma3(fg) - luma3(bg)) < 0.3 && tries < 64; ++tries) fg = random_colour(rng);
    }
    const double grad_x = rng.uniform(-0.15, 0.15), grad_y = rng.uniform(-0.15, 0.15);
    const double noise = 0.04;

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy)
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double px = x + (sx + 0.5) / kSuper - cx;
                    const double py = y + (sy + 0.5) / kSuper - cy;
                    const double u = (c * px + s * py) / radius;
                    const double v = (-s * px + c * py) / radius;
                    hits += inside(label, u, v);
                }
            const double cover = static_cast<double>(hits) / (kSuper * kSuper);
            const double shade = grad_x * (x - half) / size + grad_y * (y - half) / size;
            for (int ch = 0; ch < 3; ++ch) {
                const double base = bg[ch] + shade;
                // Sum of three uniforms: cheap bell-shaped grain.
                const double n = (rng.uniform() + rng.uniform() + rng.uniform() - 1.5) * 2.0 * noise;
                img.at(ch, y, x) = quantise(base + cover * (fg[ch] - base) + n);
            }
        }
    }
    return img;
}

Dataset make_split(const std::string& name, std::uint64_t seed, std::uint64_t split, int count, int size,
                   bool class_colour) {
    Dataset ds;
    ds.name = name;
    ds.num_classes = 10;
    ds.images.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, split, static_cast<std::uint64_t>(i), 0));
        const int label = i % 10;
        ds.images.push_back(render(label, size, i, class_colour, rng));
        ds.labels.push_back(label);
    }
    return ds;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw DatasetError("dataset cache: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const fs::path& path, const void* data, std::size_t size) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("write failed (disk full?): " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::vector<std::uint8_t> gunzip_file(const std::string& path) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw DatasetError("cannot open archive " + path);
    std::vector<std::uint8_t> out;
    std::array<std::uint8_t, 1 << 16> buf{};
    for (;;) {
        const int n = gzread(gz, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            gzclose(gz);
            throw DatasetError("corrupt gzip stream in " + path);
        }
        if (n == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(gz);
    return out;
}

// Minimal ustar reader: name -> contents for regular files.
std::vector<std::pair<std::string, std::vector<std::uint8_t>>> untar(const std::vector<std::uint8_t>& tar) {
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> files;
    std::size_t pos = 0;
    while (pos + 512 <= tar.size()) {
        const auto* h = tar.data() + pos;
        if (std::all_of(h, h + 512, [](std::uint8_t b) { return b == 0; })) break;
        std::string name(reinterpret_cast<const char*>(h), strnlen(reinterpret_cast<const char*>(h), 100));
        const std::string size_field(reinterpret_cast<const char*>(h + 124), 12);
        const std::size_t size = std::strtoull(size_field.c_str(), nullptr, 8);
        const char type = static_cast<char>(h[156]);
        pos += 512;
        if (pos + size > tar.size()) throw DatasetError("tar: truncated member " + name);
        if (type == '0' || type == '\0')
            files.emplace_back(name, std::vector<std::uint8_t>(tar.begin() + static_cast<std::ptrdiff_t>(pos),
                                                               tar.begin() + static_cast<std::ptrdiff_t>(pos + size)));
        pos += (size + 511) / 512 * 512;
    }
    return files;
}

void append_cifar_batch(Dataset& ds, const std::vector<std::uint8_t>& bytes) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    if (bytes.size() % kRecord != 0) throw DatasetError("cifar10: batch size is not a multiple of the record size");
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
        ImageSample img(32, 32, static_cast<std::int64_t>(ds.images.size()));
        for (std::size_t i = 0; i < 3 * 32 * 32; ++i) img.pixels[i] = static_cast<float>(bytes[off + 1 + i]) / 255.0f;
        ds.labels.push_back(bytes[off]);
        ds.images.push_back(std::move(img));
    }
}

std::string cache_key(const std::string& name, const IngestOptions& opts) {
    if (name == "synthetic-tiny")
        return name + "-s" + std::to_string(opts.seed) + "-n" + std::to_string(opts.synthetic.train_size) + "-" +
               std::to_string(opts.synthetic.test_size) + "-px" + std::to_string(opts.synthetic.image_size) +
               (opts.synthetic.class_colour ? "-cc" : "");
    return name;
}

}  // namespace

Dataset Dataset::head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset out;
    out.name = name;
    out.num_classes = num_classes;
    out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

std::string_view synthetic_class_name(int label) {
    if (label < 0 || label >= static_cast<int>(kNames.size())) return "unknown";
    return kNames[static_cast<std::size_t>(label)];
}

DatasetSplits synthetic_tiny(const SyntheticConfig& cfg) {
    if (cfg.train_size < 10 || cfg.test_size < 0 || cfg.image_size < 8)
        throw ConfigError("data.synthetic", "need >= 10 train images and image_size >= 8");
    return {make_split("synthetic-tiny", cfg.seed, 0, cfg.train_size, cfg.image_size, cfg.class_colour),
            make_split("synthetic-tiny", cfg.seed, 1, cfg.test_size, cfg.image_size, cfg.class_colour)};
}

std::vector<std::uint8_t> serialize(const Dataset& ds) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    const int h = ds.images.empty() ? 0 : ds.images.front().height;
    const int w = ds.images.empty() ? 0 : ds.images.front().width;
    put_u32(out, static_cast<std::uint32_t>(ds.size()));
    put_u32(out, static_cast<std::uint32_t>(h));
    put_u32(out, static_cast<std::uint32_t>(w));
    put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    for (int label : ds.labels) out.push_back(static_cast<std::uint8_t>(label));
    for (const auto& img : ds.images) {
        if (img.height != h || img.width != w) throw ShapeError("serialize: mixed image sizes");
        for (float p : img.pixels)
            out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)));
    }
    return out;
}

Dataset deserialize(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DatasetError("dataset cache: bad magic");
    std::size_t pos = sizeof(kMagic);
    const auto count = get_u32(bytes, pos);
    const auto h = static_cast<int>(get_u32(bytes, pos));
    const auto w = static_cast<int>(get_u32(bytes, pos));
    Dataset ds;
    ds.name = name;
    ds.num_classes = static_cast<int>(get_u32(bytes, pos));
    const std::size_t per = static_cast<std::size_t>(3) * h * w;
    if (bytes.size() != pos + count + count * per) throw DatasetError("dataset cache: size mismatch");
    for (std::uint32_t i = 0; i < count; ++i) ds.labels.push_back(bytes[pos + i]);
    pos += count;
    for (std::uint32_t i = 0; i < count; ++i) {
        ImageSample img(h, w, i);
        for (std::size_t k = 0; k < per; ++k) img.pixels[k] = static_cast<float>(bytes[pos + k]) / 255.0f;
        pos += per;
        ds.images.push_back(std::move(img));
    }
    return ds;
}

void write_cache(const std::string& path, const Dataset& ds) {
    const auto bytes = serialize(ds);
    const auto digest = sha256_hex(std::span<const std::uint8_t>(bytes));
    write_atomic(path, bytes.data(), bytes.size());
    const std::string line = digest + "\n";
    write_atomic(path + ".sha256", line.data(), line.size());
}

std::optional<Dataset> read_cache(const std::string& path, const std::string& name) {
    if (!fs::exists(path) || !fs::exists(path + ".sha256")) return std::nullopt;
    const auto bytes = read_file(path);
    const auto sidecar = read_file(path + ".sha256");
    std::string expected(sidecar.begin(), sidecar.end());
    expected.erase(expected.find_last_not_of(" \n\r\t") + 1);
    if (sha256_hex(std::span<const std::uint8_t>(bytes)) != expected)
        throw DatasetError("dataset cache checksum mismatch: " + path);
    return deserialize(bytes, name);
}

DatasetSplits read_cifar10_archive(const std::string& archive_path, const std::string& expected_md5) {
    if (!fs::exists(archive_path)) throw DatasetError("cifar10 archive not found: " + archive_path);
    const auto md5 = md5_file_hex(archive_path);
    if (md5 != expected_md5)
        throw DatasetError("cifar10 archive checksum mismatch: got " + md5 + ", expected " + expected_md5);
    const auto files = untar(gunzip_file(archive_path));
    DatasetSplits out;
    out.train.name = out.test.name = "cifar10";
    for (int b = 1; b <= 5; ++b) {
        const std::string want = "data_batch_" + std::to_string(b) + ".bin";
        auto it = std::find_if(files.begin(), files.end(), [&](const auto& f) { return f.first.ends_with(want); });
        if (it == files.end()) throw DatasetError("cifar10 archive lacks " + want);
        append_cifar_batch(out.train, it->second);
    }
    auto test = std::find_if(files.begin(), files.end(), [](const auto& f) { return f.first.ends_with("test_batch.bin"); });
    if (test == files.end()) throw DatasetError("cifar10 archive lacks test_batch.bin");
    append_cifar_batch(out.test, test->second);
    return out;
}

DatasetSplits ingest_dataset(const std::string& name, const std::string& cache_dir, const IngestOptions& opts) {
    if (name != "synthetic-tiny" && name != "cifar10")
        throw ConfigError("data.name", "unknown dataset '" + name + "' (expected synthetic-tiny|cifar10)");
    const fs::path dir(cache_dir);
    const std::string key = cache_key(name, opts);
    const std::string train_path = (dir / (key + "-train.bin")).string();
    const std::string test_path = (dir / (key + "-test.bin")).string();

    DatasetSplits splits;
    auto train = read_cache(train_path, name);
    auto test = read_cache(test_path, name);
    if (train && test) {
        splits = {std::move(*train), std::move(*test)};
    } else {
        if (name == "synthetic-tiny") {
            auto cfg = opts.synthetic;
            cfg.seed = opts.seed;
            splits = synthetic_tiny(cfg);
        } else {
            std::string archive = opts.archive;
            if (archive.empty()) archive = (dir / "cifar-10-binary.tar.gz").string();
            splits = read_cifar10_archive(archive, opts.expected_md5);
        }
        write_cache(train_path, splits.train);
        write_cache(test_path, splits.test);
        // Re-read so the in-memory copy is exactly what later runs will load.
        splits = {*read_cache(train_path, name), *read_cache(test_path, name)};
    }
    splits.train = splits.train.head(opts.train_limit);
    splits.test = splits.test.head(opts.test_limit);
    return splits;
}

std::string default_cache_dir() {
    if (const char* env = std::getenv("DSSL_CACHE_DIR"); env && *env) return env;
    return ".dssl_cache";
}

}  // namespace dssl::data
