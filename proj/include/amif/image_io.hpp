#ifndef AMIF_IMAGE_IO_HPP
#define AMIF_IMAGE_IO_HPP

// PNG in/out. Colour inputs are split into luma (fused by the model) and
// chroma (carried through untouched and reattached on output).

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>

#include "amif/binary_io.hpp"
#include "amif/tensor_utils.hpp"

namespace amif::image {

struct LoadedImage {
    torch::Tensor luma;  // (1, 1, S, S) float32 in [0, 1]
    cv::Mat chroma;      // CV_32FC2 (Cr, Cb) at S x S, empty for grayscale input
    int original_height = 0;
    int original_width = 0;
};

// Loads an 8/16-bit grayscale or colour image; resizes (bilinear) to
// target_size x target_size when target_size > 0.
inline LoadedImage load(const std::filesystem::path& path, int target_size = 0) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw ValidationError("cannot read image " + path.string());
    const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    cv::Mat f;
    raw.convertTo(f, CV_32F, scale);
    if (f.channels() == 4) cv::cvtColor(f, f, cv::COLOR_BGRA2BGR);

    LoadedImage out;
    out.original_height = f.rows;
    out.original_width = f.cols;
    if (target_size > 0 && (f.rows != target_size || f.cols != target_size))
        cv::resize(f, f, cv::Size(target_size, target_size), 0, 0, cv::INTER_LINEAR);

    cv::Mat y;
    if (f.channels() == 3) {
        cv::Mat ycrcb;
        cv::cvtColor(f, ycrcb, cv::COLOR_BGR2YCrCb);
        std::vector<cv::Mat> planes;
        cv::split(ycrcb, planes);
        y = planes[0];
        cv::merge(std::vector<cv::Mat>{planes[1], planes[2]}, out.chroma);
    } else if (f.channels() == 1) {
        y = f;
    } else {
        throw ValidationError("unsupported channel count in " + path.string());
    }
    y = y.clone();
    out.luma = torch::from_blob(y.data, {1, 1, y.rows, y.cols}, torch::kFloat32).clone().clamp(0.0, 1.0);
    return out;
}

inline cv::Mat to_mat(const torch::Tensor& luma) {
    auto t = luma.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    while (t.dim() > 2) t = t.squeeze(0);
    if (t.dim() != 2) throw DimensionError("image::to_mat: expected a single-channel image, got " + shape_str(luma));
    cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32F);
    std::memcpy(m.data, t.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(t.numel()));
    return m;
}

// Writes an 8-bit PNG (grayscale, or BGR when chroma is given) atomically.
inline void save_png(const std::filesystem::path& path, const torch::Tensor& luma, const cv::Mat& chroma = {}) {
    cv::Mat y = to_mat(luma);
    cv::Mat out;
    if (!chroma.empty()) {
        if (chroma.rows != y.rows || chroma.cols != y.cols)
            throw DimensionError("image::save_png: chroma size does not match luma");
        std::vector<cv::Mat> cc;
        cv::split(chroma, cc);
        cv::Mat ycrcb, bgr;
        cv::merge(std::vector<cv::Mat>{y, cc[0], cc[1]}, ycrcb);
        cv::cvtColor(ycrcb, bgr, cv::COLOR_YCrCb2BGR);
        out = bgr;
    } else {
        out = y;
    }
    cv::Mat u8;
    out.convertTo(u8, CV_8U, 255.0);
    std::vector<uchar> buf;
    if (!cv::imencode(".png", u8, buf)) throw ValidationError("PNG encode failed for " + path.string());
    io::write_file_atomic(path, io::Bytes(buf.begin(), buf.end()));
}

}  // namespace amif::image

#endif
