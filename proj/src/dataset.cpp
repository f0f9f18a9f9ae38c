#include "msca/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "msca/random.hpp"

namespace msca {

namespace fs = std::filesystem;

BoxPrompt box_from_mask(const BinaryMask& mask) {
    int r0 = mask.height(), r1 = -1, c0 = mask.width(), c1 = -1;
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (!mask.at(r, c)) continue;
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
        }
    }
    if (r1 < 0) throw ValidationError("cannot derive a box from an empty mask");
    return {c0, r0, c1 + 1, r1 + 1};
}

int perturbation_max(int image_size) {
    return std::max(1, static_cast<int>(std::lround(20.0 * image_size / 1024.0)));
}

BoxPrompt perturb_box(const BoxPrompt& box, Rng& rng, int image_size, std::optional<int> p_max) {
    const int p = p_max.value_or(perturbation_max(image_size));
    if (p < 0) throw ConfigError("perturbation bound must be non-negative");
    std::uniform_int_distribution<int> offset(0, p);
    const int dx0 = offset(rng), dy0 = offset(rng), dx1 = offset(rng), dy1 = offset(rng);
    return {std::max(0, box.x0 - dx0), std::max(0, box.y0 - dy0), std::min(image_size, box.x1 + dx1),
            std::min(image_size, box.y1 + dy1)};
}

namespace {

struct Ellipse {
    double cx, cy, a, b, theta;

    bool covers(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * std::cos(theta) + dy * std::sin(theta);
        const double v = -dx * std::sin(theta) + dy * std::cos(theta);
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

Ellipse random_ellipse(Rng& rng, int s, const SynthConfig& cfg) {
    std::uniform_real_distribution<double> axis(cfg.axis_lo * s, cfg.axis_hi * s);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    Ellipse e{};
    e.a = axis(rng);
    e.b = axis(rng);
    e.theta = angle(rng);
    // Half extents of the rotated ellipse keep it entirely inside the frame.
    const double c = std::cos(e.theta), sn = std::sin(e.theta);
    const double ex = std::sqrt(e.a * e.a * c * c + e.b * e.b * sn * sn);
    const double ey = std::sqrt(e.a * e.a * sn * sn + e.b * e.b * c * c);
    e.cx = std::uniform_real_distribution<double>(ex, s - ex)(rng);
    e.cy = std::uniform_real_distribution<double>(ey, s - ey)(rng);
    return e;
}

}  // namespace

Sample gen_synthetic_one(std::uint64_t seed, int index, int image_size, const SynthConfig& cfg) {
    if (image_size < 16 || image_size % 16 != 0) throw ConfigError("synthetic image size must be a positive multiple of 16");
    if (!(cfg.contrast_lo >= 0 && cfg.contrast_lo <= cfg.contrast_hi)) throw ConfigError("invalid contrast range");
    const int s = image_size;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));

    std::vector<Ellipse> shapes{random_ellipse(rng, s, cfg)};
    if (std::uniform_int_distribution<int>(1, 2)(rng) == 2) shapes.push_back(random_ellipse(rng, s, cfg));

    const double mu_b = std::uniform_real_distribution<double>(cfg.background_lo, cfg.background_hi)(rng);
    const double delta = std::uniform_real_distribution<double>(cfg.contrast_lo, cfg.contrast_hi)(rng);
    const double mu_f = mu_b - delta;
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    const double g1 = coef(rng), g2 = coef(rng), g3 = coef(rng);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

    BinaryMask mask(s, s);
    std::vector<double> gray(static_cast<std::size_t>(s) * s);
    for (int r = 0; r < s; ++r) {
        for (int c = 0; c < s; ++c) {
            const double x = c + 0.5, y = r + 0.5;
            const bool fg = std::any_of(shapes.begin(), shapes.end(), [&](const Ellipse& e) { return e.covers(x, y); });
            mask.set(r, c, fg);
            const double u = 2.0 * x / s - 1.0, v = 2.0 * y / s - 1.0;
            const double bias = cfg.bias_amplitude / 3.0 * (g1 * u + g2 * v + g3 * u * v);
            const double value = (fg ? mu_f : mu_b) + bias + noise(rng);
            gray[static_cast<std::size_t>(r) * s + c] = std::round(std::clamp(value, 0.0, 1.0) * 255.0) / 255.0;
        }
    }
    Tensor image({3, s, s});
    for (int ch = 0; ch < 3; ++ch) std::copy(gray.begin(), gray.end(), image.data().begin() + ch * s * s);

    char id[32];
    std::snprintf(id, sizeof id, "synth_%05d", index);
    Sample out{id, image, mask, box_from_mask(mask)};
    return out;
}

std::vector<Sample> gen_synthetic(std::uint64_t seed, int n, int image_size, const SynthConfig& cfg) {
    if (n < 1) throw ConfigError("need at least one synthetic sample");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(gen_synthetic_one(seed, i, image_size, cfg));
    return out;
}

GrayImage image_to_gray(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) < 1) throw DimensionError("expected an image [C,H,W], got " + shape_str(image.shape()));
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    GrayImage g{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w)};
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
    }
    return g;
}

Tensor gray_to_image(const GrayImage& gray) {
    const auto plane = static_cast<std::size_t>(gray.width) * gray.height;
    Tensor image({3, gray.height, gray.width});
    for (std::size_t i = 0; i < plane; ++i) {
        const double v = gray.pixels[i] / 255.0;
        for (std::size_t ch = 0; ch < 3; ++ch) image.data()[ch * plane + i] = v;
    }
    return image;
}

void save_sample(const std::string& dir, const Sample& sample) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    write_pgm((fs::path(dir) / "images" / (sample.id + ".pgm")).string(), image_to_gray(sample.image));
    write_mask((fs::path(dir) / "masks" / (sample.id + ".pgm")).string(), sample.mask);
}

Sample load_sample(const std::string& dir, const std::string& id) {
    const auto gray = read_pgm((fs::path(dir) / "images" / (id + ".pgm")).string());
    auto mask = read_mask((fs::path(dir) / "masks" / (id + ".pgm")).string());
    if (mask.width() != gray.width || mask.height() != gray.height) {
        throw ValidationError("image and mask sizes differ for sample " + id);
    }
    Sample s{id, gray_to_image(gray), std::move(mask), {}};
    if (!s.mask.empty()) s.box = box_from_mask(s.mask);
    return s;
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

const std::vector<std::string>& DatasetManifest::ids(Split split) const {
    switch (split) {
        case Split::Train: return train;
        case Split::Val: return val;
        default: return test;
    }
}

SplitSizes split_sizes(int n) {
    const int train = static_cast<int>(std::lround(2.0 * n / 3.0));
    const int val = (n - train) / 2;
    return {train, val, n - train - val};
}

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

}  // namespace

void save_manifest(const DatasetManifest& m) {
    fs::create_directories(m.root);
    const fs::path root(m.root);
    std::ofstream out(root / "manifest.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (root / "manifest.txt").string());
    out << "seed=" << m.seed << "\nsize=" << m.size << "\nn=" << m.train.size() + m.val.size() + m.test.size()
        << "\n";
    write_lines(root / "train.txt", m.train);
    write_lines(root / "val.txt", m.val);
    write_lines(root / "test.txt", m.test);
}

DatasetManifest write_synthetic_dataset(const std::string& root, std::uint64_t seed, int n, int image_size,
                                        const SynthConfig& cfg) {
    const auto samples = gen_synthetic(seed, n, image_size, cfg);
    DatasetManifest m;
    m.root = root;
    m.seed = seed;
    m.size = image_size;
    const auto sizes = split_sizes(n);
    for (int i = 0; i < n; ++i) {
        save_sample(root, samples[static_cast<std::size_t>(i)]);
        auto& bucket = i < sizes.train ? m.train : i < sizes.train + sizes.val ? m.val : m.test;
        bucket.push_back(samples[static_cast<std::size_t>(i)].id);
    }
    save_manifest(m);
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    fs::path file(path);
    if (fs::is_directory(file)) file /= "manifest.txt";
    DatasetManifest m;
    m.root = file.parent_path().string();
    if (m.root.empty()) m.root = ".";
    for (const auto& line : read_lines(file)) {
        if (line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("manifest line without '=': " + line);
        const auto key = line.substr(0, eq), value = line.substr(eq + 1);
        try {
            if (key == "seed") m.seed = std::stoull(value);
            else if (key == "size") m.size = std::stoi(value);
        } catch (const std::logic_error&) {
            throw ConfigError("bad manifest value for " + key + ": " + value);
        }
    }
    const fs::path root(m.root);
    m.train = read_lines(root / "train.txt");
    m.val = read_lines(root / "val.txt");
    m.test = read_lines(root / "test.txt");
    std::vector<std::string> all(m.train);
    all.insert(all.end(), m.val.begin(), m.val.end());
    all.insert(all.end(), m.test.begin(), m.test.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw ValidationError("manifest splits overlap");
    return m;
}

LoadedSplit load_split(const DatasetManifest& manifest, Split split) {
    LoadedSplit out;
    for (const auto& id : manifest.ids(split)) {
        auto s = load_sample(manifest.root, id);
        if (manifest.size && (s.mask.width() != manifest.size || s.mask.height() != manifest.size)) {
            throw ValidationError("sample " + id + " is not " + std::to_string(manifest.size) + " pixels square");
        }
        if (s.mask.empty()) {
            ++out.filtered_empty;
            continue;
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

}  // namespace msca
