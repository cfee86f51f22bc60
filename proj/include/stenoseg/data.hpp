#pragma once

// Dataset ingestion: COCO-style polygon annotations, even-odd scanline
// rasterization, k-fold planning, and sample preparation (grayscale [0,1]
// images + binary masks at a fixed working resolution). All stenosis
// categories collapse to a single foreground class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "stenoseg/image_io.hpp"

namespace stenoseg {

// Distinct, reportable ingestion error kinds.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AnnotationParseError : DataError {
    using DataError::DataError;
};
struct DanglingReferenceError : DataError {
    using DataError::DataError;
};
struct BadPolygonError : DataError {
    using DataError::DataError;
};

struct AnnImage {
    long id = 0;
    std::string file_name;
    std::size_t width = 0, height = 0;
};

struct Annotation {
    long id = 0;
    long image_id = 0;
    long category_id = 0;
    std::vector<std::vector<double>> segmentation;  // flat x,y polygon lists
};

struct Category {
    long id = 0;
    std::string name;
};

struct AnnotationSet {
    std::vector<AnnImage> images;
    std::vector<Annotation> annotations;
    std::vector<Category> categories;

    const AnnImage* find_image(long id) const {
        for (const auto& im : images)
            if (im.id == id) return &im;
        return nullptr;
    }
    std::vector<const Annotation*> annotations_for(long image_id) const {
        std::vector<const Annotation*> out;
        for (const auto& a : annotations)
            if (a.image_id == image_id) out.push_back(&a);
        return out;
    }
};

inline AnnotationSet load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open annotations: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw AnnotationParseError("annotation JSON parse failure in " + path + ": " + e.what());
    }
    AnnotationSet set;
    try {
        for (const auto& im : j.at("images")) {
            AnnImage a;
            a.id = im.at("id").get<long>();
            a.file_name = im.at("file_name").get<std::string>();
            a.width = im.at("width").get<std::size_t>();
            a.height = im.at("height").get<std::size_t>();
            set.images.push_back(std::move(a));
        }
        if (j.contains("categories"))
            for (const auto& c : j.at("categories"))
                set.categories.push_back(
                    {c.at("id").get<long>(), c.at("name").get<std::string>()});
        for (const auto& an : j.at("annotations")) {
            Annotation a;
            a.id = an.at("id").get<long>();
            a.image_id = an.at("image_id").get<long>();
            a.category_id = an.at("category_id").get<long>();
            for (const auto& poly : an.at("segmentation")) {
                auto flat = poly.get<std::vector<double>>();
                if (flat.size() % 2 != 0 || flat.size() < 6)
                    throw BadPolygonError("annotation " + std::to_string(a.id) +
                                          ": polygon list must have even length >= 6, got " +
                                          std::to_string(flat.size()));
                a.segmentation.push_back(std::move(flat));
            }
            set.annotations.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw AnnotationParseError("annotation schema violation in " + path + ": " + e.what());
    }
    for (const auto& a : set.annotations)
        if (!set.find_image(a.image_id))
            throw DanglingReferenceError("annotation " + std::to_string(a.id) +
                                         " references missing image id " +
                                         std::to_string(a.image_id));
    return set;
}

// ---------------------------------------------------------------------------
// Rasterization: even-odd rule sampled at pixel centers (c+0.5, r+0.5).
// Scanline crossings (independent of the per-pixel point-in-polygon oracle
// used by the tests).

inline double polygon_area(const std::vector<double>& poly) {
    const std::size_t n = poly.size() / 2;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = (i + 1) % n;
        acc += poly[2 * i] * poly[2 * k + 1] - poly[2 * k] * poly[2 * i + 1];
    }
    return 0.5 * acc;
}

inline std::vector<std::uint8_t> rasterize_polygon(const std::vector<double>& poly, std::size_t H,
                                                   std::size_t W,
                                                   std::vector<std::string>* warnings = nullptr) {
    if (poly.size() % 2 != 0 || poly.size() < 6)
        throw BadPolygonError("polygon list must have even length >= 6");
    std::vector<std::uint8_t> mask(H * W, 0);
    if (std::abs(polygon_area(poly)) == 0.0) {
        if (warnings) warnings->push_back("degenerate zero-area polygon; emitting empty mask");
        return mask;
    }
    const std::size_t n = poly.size() / 2;
    std::vector<double> xs;
    for (std::size_t r = 0; r < H; ++r) {
        const double y = double(r) + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = (i + 1) % n;
            const double x1 = poly[2 * i], y1 = poly[2 * i + 1];
            const double x2 = poly[2 * k], y2 = poly[2 * k + 1];
            if ((y1 > y) == (y2 > y)) continue;  // half-open vertex rule
            xs.push_back(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            // pixel centers c+0.5 in [xs[i], xs[i+1])
            const double lo = xs[i] - 0.5, hi = xs[i + 1] - 0.5;
            const long c0 = std::max(0L, long(std::ceil(lo)));
            const long c1 = std::min(long(W) - 1, long(std::ceil(hi)) - 1);
            for (long c = c0; c <= c1; ++c) mask[r * W + std::size_t(c)] = 1;
        }
    }
    return mask;
}

inline std::vector<std::uint8_t> rasterize_annotation(const Annotation& a, std::size_t H,
                                                      std::size_t W,
                                                      std::vector<std::string>* warnings = nullptr) {
    std::vector<std::uint8_t> mask(H * W, 0);
    for (const auto& poly : a.segmentation) {
        auto m = rasterize_polygon(poly, H, W, warnings);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] |= m[i];
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Fold planning: seeded shuffle, contiguous k-way split.

struct FoldPlan {
    struct Fold {
        std::vector<std::string> train_ids, validation_ids;
    };
    std::size_t fold_count = 0;
    std::uint64_t seed = 0;
    std::vector<Fold> folds;

    void validate(const std::vector<std::string>& ids) const {
        std::vector<std::string> all_val;
        for (const auto& f : folds) {
            for (const auto& v : f.validation_ids) {
                if (std::find(f.train_ids.begin(), f.train_ids.end(), v) != f.train_ids.end())
                    throw DataError("fold plan corrupt: id in both train and validation: " + v);
                all_val.push_back(v);
            }
        }
        std::sort(all_val.begin(), all_val.end());
        auto sorted_ids = ids;
        std::sort(sorted_ids.begin(), sorted_ids.end());
        if (all_val != sorted_ids)
            throw DataError("fold plan corrupt: validation sets do not partition the id set");
    }
};

inline FoldPlan make_folds(const std::vector<std::string>& ids, std::size_t k,
                           std::uint64_t seed) {
    if (k < 2) throw DataError("fold count must be >= 2");
    if (ids.size() < k) throw DataError("fold count exceeds id count");
    std::vector<std::string> shuffled = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    FoldPlan plan;
    plan.fold_count = k;
    plan.seed = seed;
    const std::size_t n = shuffled.size();
    std::size_t start = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = n / k + (f < n % k ? 1 : 0);
        FoldPlan::Fold fold;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= start && i < start + len)
                fold.validation_ids.push_back(shuffled[i]);
            else
                fold.train_ids.push_back(shuffled[i]);
        }
        start += len;
        plan.folds.push_back(std::move(fold));
    }
    plan.validate(ids);
    return plan;
}

// ---------------------------------------------------------------------------
// Resampling (pixel-center aligned).

template <class T>
inline std::vector<T> resize_bilinear(const std::vector<T>& src, std::size_t sh, std::size_t sw,
                                      std::size_t dh, std::size_t dw) {
    std::vector<T> dst(dh * dw);
    for (std::size_t r = 0; r < dh; ++r)
        for (std::size_t c = 0; c < dw; ++c) {
            const double sy = (double(r) + 0.5) * double(sh) / double(dh) - 0.5;
            const double sx = (double(c) + 0.5) * double(sw) / double(dw) - 0.5;
            const double fy = std::clamp(sy, 0.0, double(sh - 1));
            const double fx = std::clamp(sx, 0.0, double(sw - 1));
            const std::size_t y0 = std::size_t(fy), x0 = std::size_t(fx);
            const std::size_t y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
            const double wy = fy - double(y0), wx = fx - double(x0);
            const double v = (1 - wy) * ((1 - wx) * double(src[y0 * sw + x0]) +
                                         wx * double(src[y0 * sw + x1])) +
                             wy * ((1 - wx) * double(src[y1 * sw + x0]) +
                                   wx * double(src[y1 * sw + x1]));
            dst[r * dw + c] = T(v);
        }
    return dst;
}

template <class T>
inline std::vector<T> resize_nearest(const std::vector<T>& src, std::size_t sh, std::size_t sw,
                                     std::size_t dh, std::size_t dw) {
    std::vector<T> dst(dh * dw);
    for (std::size_t r = 0; r < dh; ++r)
        for (std::size_t c = 0; c < dw; ++c) {
            const std::size_t sy =
                std::min(sh - 1, std::size_t((double(r) + 0.5) * double(sh) / double(dh)));
            const std::size_t sx =
                std::min(sw - 1, std::size_t((double(c) + 0.5) * double(sw) / double(dw)));
            dst[r * dw + c] = src[sy * sw + sx];
        }
    return dst;
}

// ---------------------------------------------------------------------------
// Samples

struct Sample {
    std::string id;
    Tensor<float> image;               // [1,S,S], values in [0,1]
    std::vector<std::uint8_t> mask;    // S*S, values in {0,1}
    std::string source_path;

    std::size_t size() const { return image.extent(1); }
};

// Image intensities scale to [0,1] by source bit depth; masks from all
// annotations are OR-combined. Non-target inputs: bilinear for the image,
// nearest for the mask.
inline Sample prepare_sample(const std::string& id, const std::string& image_path,
                             const std::vector<const Annotation*>& anns,
                             std::size_t target = 512,
                             std::vector<std::string>* warnings = nullptr) {
    const GrayImage img = read_image(image_path);
    std::vector<float> intensity(img.pixels.size());
    for (std::size_t i = 0; i < intensity.size(); ++i)
        intensity[i] = float(img.pixels[i]) / float(img.max_value);
    std::vector<std::uint8_t> mask(img.height * img.width, 0);
    for (const Annotation* a : anns) {
        auto m = rasterize_annotation(*a, img.height, img.width, warnings);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] |= m[i];
    }
    if (img.height != target || img.width != target) {
        intensity = resize_bilinear(intensity, img.height, img.width, target, target);
        mask = resize_nearest(mask, img.height, img.width, target, target);
    }
    Sample s;
    s.id = id;
    s.image = Tensor<float>(Shape{1, target, target}, std::move(intensity), false);
    s.mask = std::move(mask);
    s.source_path = image_path;
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic blob corpus for desk-scale training runs: each image carries a
// bright convex blob on a darker textured background; the mask is the blob's
// polygon rasterized with the same normative rule as real annotations.

struct BlobSample {
    Sample sample;
    std::vector<double> polygon;  // flat x,y
};

inline BlobSample generate_blob_sample(const std::string& id, std::size_t size,
                                       std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit{0.0, 1.0};
    const double margin = double(size) * 0.2;
    const double cx = margin + unit(rng) * (double(size) - 2 * margin);
    const double cy = margin + unit(rng) * (double(size) - 2 * margin);
    const double rx = double(size) * (0.10 + 0.08 * unit(rng));
    const double ry = double(size) * (0.10 + 0.08 * unit(rng));
    const double phase = unit(rng) * 6.283185307179586;
    std::vector<double> poly;
    const std::size_t verts = 12;
    for (std::size_t i = 0; i < verts; ++i) {
        const double th = phase + 6.283185307179586 * double(i) / double(verts);
        poly.push_back(cx + rx * std::cos(th));
        poly.push_back(cy + ry * std::sin(th));
    }
    auto mask = rasterize_polygon(poly, size, size);
    std::vector<float> intensity(size * size);
    std::uniform_real_distribution<float> noise{-0.05f, 0.05f};
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            const std::size_t i = r * size + c;
            const float bg = 0.15f + 0.05f * float(std::sin(0.3 * double(r)) *
                                                   std::cos(0.2 * double(c)));
            intensity[i] = std::clamp(bg + (mask[i] ? 0.6f : 0.0f) + noise(rng), 0.0f, 1.0f);
        }
    BlobSample out;
    out.sample.id = id;
    out.sample.image = Tensor<float>(Shape{1, size, size}, std::move(intensity), false);
    out.sample.mask = std::move(mask);
    out.sample.source_path = "synthetic://" + id;
    out.polygon = std::move(poly);
    return out;
}

inline std::vector<BlobSample> generate_blob_dataset(std::size_t n, std::size_t size,
                                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<BlobSample> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(generate_blob_sample("blob" + std::to_string(i), size, rng));
    return out;
}

// ---------------------------------------------------------------------------
// Sample cache: image and mask in the tensor container format, plus an FNV-1a
// checksum used by the manifest.

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t sample_checksum(const Sample& s) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(s.image.numel() * 4 + s.mask.size());
    for (float v : s.image.values()) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        for (int k = 0; k < 4; ++k) bytes.push_back(std::uint8_t(u >> (8 * k)));
    }
    bytes.insert(bytes.end(), s.mask.begin(), s.mask.end());
    return fnv1a(bytes);
}

inline void save_sample(const Sample& s, const std::string& dir) {
    save_tensor(s.image, dir + "/" + s.id + ".img");
    std::vector<float> m(s.mask.begin(), s.mask.end());
    save_tensor(Tensor<float>(Shape{s.size(), s.size()}, std::move(m), false),
                dir + "/" + s.id + ".mask");
}

inline Sample load_sample(const std::string& id, const std::string& dir) {
    Sample s;
    s.id = id;
    s.image = load_tensor<float>(dir + "/" + id + ".img");
    auto m = load_tensor<float>(dir + "/" + id + ".mask");
    s.mask.resize(m.numel());
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
        const float v = m.values()[i];
        if (v != 0.0f && v != 1.0f) throw IOError("cached mask is not binary: " + id);
        s.mask[i] = std::uint8_t(v);
    }
    s.source_path = dir + "/" + id + ".img";
    return s;
}

}  // namespace stenoseg
