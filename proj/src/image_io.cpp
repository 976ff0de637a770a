#include "dsadapt/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace dsadapt {

namespace {

Image8 from_mat_rgb(const cv::Mat& mat, const std::string& path) {
    if (mat.empty()) throw std::runtime_error("failed to read image: " + path);
    cv::Mat bgr;
    if (mat.channels() == 1) cv::cvtColor(mat, bgr, cv::COLOR_GRAY2BGR);
    else if (mat.channels() == 4) cv::cvtColor(mat, bgr, cv::COLOR_BGRA2BGR);
    else bgr = mat;
    Image8 img(3, bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            img.at(0, y, x) = row[x][2];  // OpenCV is BGR
            img.at(1, y, x) = row[x][1];
            img.at(2, y, x) = row[x][0];
        }
    }
    return img;
}

}  // namespace

Image8 read_image_rgb(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_UNCHANGED);
    return from_mat_rgb(mat, path);
}

Image8 read_image_gray(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (mat.empty()) throw std::runtime_error("failed to read image: " + path);
    Image8 img(1, mat.rows, mat.cols);
    for (int y = 0; y < mat.rows; ++y) {
        const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) img.at(0, y, x) = row[x];
    }
    return img;
}

void write_image(const std::string& path, const Image8& img) {
    if (img.channels == 1) {
        cv::Mat mat(img.h, img.w, CV_8UC1);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) mat.at<std::uint8_t>(y, x) = img.at(0, y, x);
        if (!cv::imwrite(path, mat)) throw std::runtime_error("failed to write image: " + path);
        return;
    }
    if (img.channels != 3) throw std::invalid_argument("write_image: 1 or 3 channels only");
    cv::Mat mat(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y) {
        cv::Vec3b* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.w; ++x)
            row[x] = cv::Vec3b(img.at(2, y, x), img.at(1, y, x), img.at(0, y, x));
    }
    if (!cv::imwrite(path, mat)) throw std::runtime_error("failed to write image: " + path);
}

}  // namespace dsadapt
