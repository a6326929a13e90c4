#include "aoda/imaging.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "aoda/errors.hpp"

namespace aoda {

namespace {

cv::Mat normalize_decoded(cv::Mat img) {
  if (img.depth() == CV_16U) img.convertTo(img, CV_8U, 1.0 / 257.0);
  if (img.depth() != CV_8U) img.convertTo(img, CV_8U);
  if (img.channels() == 4) {
    // Composite over white; transparent canvas regions are background.
    std::vector<cv::Mat> ch;
    cv::split(img, ch);
    cv::Mat alpha;
    ch[3].convertTo(alpha, CV_32F, 1.0 / 255.0);
    cv::Mat out(img.rows, img.cols, CV_8UC3);
    for (int c = 0; c < 3; ++c) {
      cv::Mat f;
      ch[c].convertTo(f, CV_32F);
      cv::Mat blended = f.mul(alpha) + 255.0f * (1.0f - alpha);
      cv::Mat b8;
      blended.convertTo(b8, CV_8U);
      ch[c] = b8;
    }
    cv::merge(std::vector<cv::Mat>{ch[0], ch[1], ch[2]}, out);
    return out;
  }
  if (img.channels() == 1) {
    cv::Mat out;
    cv::cvtColor(img, out, cv::COLOR_GRAY2BGR);
    return out;
  }
  return img;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::sketch ? "sketch" : "photo"; }

cv::Mat read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, "cannot open image");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  cv::Mat img;
  if (!bytes.empty()) img = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  if (img.empty() || img.rows < 1 || img.cols < 1) throw DataError(path, "undecodable image");
  return normalize_decoded(std::move(img));
}

cv::Mat decode_image(std::span<const uint8_t> bytes) {
  cv::Mat img;
  if (!bytes.empty()) {
    std::vector<uint8_t> buf(bytes.begin(), bytes.end());
    img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  }
  if (img.empty()) throw DataError("<memory>", "undecodable image");
  return normalize_decoded(std::move(img));
}

torch::Tensor preprocess_image(const cv::Mat& raw, int size, Domain domain) {
  if (raw.empty()) throw std::invalid_argument("preprocess_image: empty image");
  if (size <= 0) throw std::invalid_argument("preprocess_image: size must be positive");
  cv::Mat img = normalize_decoded(raw.clone());
  if (domain == Domain::sketch) {
    cv::Mat gray;
    cv::cvtColor(img, gray, cv::COLOR_BGR2GRAY);
    cv::cvtColor(gray, img, cv::COLOR_GRAY2BGR);
  }
  if (img.rows != size || img.cols != size) {
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    img = resized;
  }
  cv::Mat rgb;
  cv::cvtColor(img, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {size, size, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

cv::Mat tensor_to_image(const torch::Tensor& chw) {
  TORCH_CHECK(chw.dim() == 3 && chw.size(0) == 3, "tensor_to_image expects [3,H,W]");
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).clamp(-1.0, 1.0).add(1.0).mul(127.5).round();
  auto hwc = t.to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

std::vector<uint8_t> encode_png(const cv::Mat& image) {
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", image, out)) throw std::runtime_error("PNG encoding failed");
  return out;
}

void write_png(const std::filesystem::path& path, const cv::Mat& image) {
  auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(path, "failed to write image");
}

cv::Mat image_grid(const std::vector<torch::Tensor>& rows) {
  if (rows.empty()) return {};
  const int64_t h = rows.front().size(2);
  const int64_t w = rows.front().size(3);
  int64_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size(0));
  cv::Mat grid(static_cast<int>(h * static_cast<int64_t>(rows.size())), static_cast<int>(w * cols), CV_8UC3,
               cv::Scalar(255, 255, 255));
  for (size_t ri = 0; ri < rows.size(); ++ri) {
    for (int64_t ci = 0; ci < rows[ri].size(0); ++ci) {
      cv::Mat tile = tensor_to_image(rows[ri][ci]);
      tile.copyTo(grid(cv::Rect(static_cast<int>(ci * w), static_cast<int>(ri * h), static_cast<int>(w),
                                static_cast<int>(h))));
    }
  }
  return grid;
}

}  // namespace aoda
