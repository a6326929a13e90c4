#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace aoda {

enum class Domain { sketch, photo };

std::string to_string(Domain d);

/// Reads an image from disk as 8-bit BGR (alpha composited over white).
/// Throws DataError carrying the path when the file cannot be decoded.
cv::Mat read_image(const std::filesystem::path& path);

/// Same as read_image for an in-memory encoded buffer (PNG, JPEG, ...).
cv::Mat decode_image(std::span<const uint8_t> bytes);

/// Resizes to size x size (bilinear), replicates grayscale to 3 channels and maps
/// [0,255] linearly onto [-1,1]. Sketches are reduced to luminance first.
/// Returns an RGB float tensor [3, size, size].
torch::Tensor preprocess_image(const cv::Mat& raw, int size, Domain domain);

/// Inverse value mapping of preprocess_image: [3,H,W] in [-1,1] -> 8-bit BGR image.
cv::Mat tensor_to_image(const torch::Tensor& chw);

std::vector<uint8_t> encode_png(const cv::Mat& image);
void write_png(const std::filesystem::path& path, const cv::Mat& image);

/// Tiles [N,3,H,W] tensors into a single image, one input tensor per row.
cv::Mat image_grid(const std::vector<torch::Tensor>& rows);

}  // namespace aoda
