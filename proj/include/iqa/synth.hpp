#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "iqa/tensor.hpp"

// Procedural stand-ins for a subjectively rated image set: pristine scenes,
// four distortion families, and a full-reference proxy opinion score.

namespace iqa::synth {

enum class Distortion { blur, noise, block_dct, wavelet };

inline constexpr Distortion kDistortions[] = {Distortion::blur, Distortion::noise, Distortion::block_dct,
                                              Distortion::wavelet};

std::string_view to_string(Distortion d);

/// Smooth shading, a few flat shapes and 1/f texture; quantized RGB.
ImageTensor pristine(std::uint64_t seed, std::size_t height = 64, std::size_t width = 64);

/// `level` in [0, 1]; larger is more severe. Output is quantized.
ImageTensor distort(const ImageTensor& img, Distortion d, double level, std::uint64_t seed);

/// 10 * SSIM(gray(distorted), gray(pristine)), clipped to [0, 10].
double proxy_mos(const ImageTensor& distorted, const ImageTensor& pristine);

struct RatedImage {
  std::string name;
  ImageTensor pristine;
  ImageTensor image;
  Distortion distortion = Distortion::blur;
  double level = 0.0;
  double mos = 0.0;
};

/// `per_distortion` images for each distortion family with levels spread
/// evenly over [0.15, 0.9]; every image has its own pristine scene.
std::vector<RatedImage> rated_set(std::uint64_t seed, std::size_t per_distortion, std::size_t size = 64);

/// Random levels in [0.02, 1] over `scenes` pristine scenes, each with
/// `per_scene` distorted versions (also includes the pristine scene itself).
std::vector<RatedImage> training_set(std::uint64_t seed, std::size_t scenes, std::size_t per_scene,
                                     std::size_t size = 64);

}  // namespace iqa::synth
