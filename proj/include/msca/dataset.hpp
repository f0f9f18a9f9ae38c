#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msca/box.hpp"
#include "msca/image_io.hpp"
#include "msca/metrics.hpp"
#include "msca/tensor.hpp"

namespace msca {

struct Sample {
    std::string id;
    Tensor image;  // [3,S,S] in [0,1]
    BinaryMask mask;
    BoxPrompt box;
};

/// Tightest box around the foreground: [min col, max col + 1) x [min row, max row + 1).
BoxPrompt box_from_mask(const BinaryMask& mask);

/// round(20 * S / 1024), at least 1.
int perturbation_max(int image_size);

/// Moves each edge outward by an independent uniform integer in [0, p_max], drawn in
/// the order x0, y0, x1, y1, then clips to [0,S]. p_max defaults to perturbation_max(S).
BoxPrompt perturb_box(const BoxPrompt& box, Rng& rng, int image_size, std::optional<int> p_max = std::nullopt);

struct SynthConfig {
    double contrast_lo = 0.15;
    double contrast_hi = 0.5;
    double background_lo = 0.55;
    double background_hi = 0.8;
    double noise_sigma = 0.05;
    double bias_amplitude = 0.08;
    double axis_lo = 1.0 / 8.0;  // semi-axis range as a fraction of S
    double axis_hi = 1.0 / 3.0;
};

/// Sample i is drawn from its own stream derive_seed(seed, i).
Sample gen_synthetic_one(std::uint64_t seed, int index, int image_size, const SynthConfig& cfg = {});
std::vector<Sample> gen_synthetic(std::uint64_t seed, int n, int image_size, const SynthConfig& cfg = {});

/// Image channel 0 quantized to 8 bits, and back (replicated to 3 channels).
GrayImage image_to_gray(const Tensor& image);
Tensor gray_to_image(const GrayImage& gray);

/// <dir>/images/<id>.pgm and <dir>/masks/<id>.pgm. The box is recomputed on load.
void save_sample(const std::string& dir, const Sample& sample);
Sample load_sample(const std::string& dir, const std::string& id);

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

/// <root>/manifest.txt (key=value: seed, n, size) plus train.txt, val.txt and
/// test.txt holding one sample id per line.
struct DatasetManifest {
    std::string root;
    std::uint64_t seed = 0;
    int size = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& ids(Split split) const;
};

/// Split sizes for n samples: train round(2n/3), val half the remainder, test the rest.
struct SplitSizes {
    int train;
    int val;
    int test;
};
SplitSizes split_sizes(int n);

/// Generates, writes and returns a synthetic dataset.
DatasetManifest write_synthetic_dataset(const std::string& root, std::uint64_t seed, int n, int image_size,
                                        const SynthConfig& cfg = {});

/// `path` is either the manifest file or the directory holding it.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest);

struct LoadedSplit {
    std::vector<Sample> samples;
    std::size_t filtered_empty = 0;
};

/// Loads a split, dropping samples whose mask is empty.
LoadedSplit load_split(const DatasetManifest& manifest, Split split);

}  // namespace msca
