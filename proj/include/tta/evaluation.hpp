#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/numerics.hpp"
#include "tta/surrogate.hpp"
#include "tta/tensor.hpp"

// Desk-scale evaluation: embedding-alignment transfer proxy across
// independently seeded surrogates, SSIM / PSNR image quality, and the
// bit-depth-reduction defense.
namespace tta {

// cos(image embedding, text embedding); by construction equals
// 1 - loss_txt at the same inputs.
inline double alignment_score(const SurrogateModel& model, const Tensor& image,
                              std::span<const int> target_tokens) {
    const Tensor img = encode_image(model, image).embedding;
    const Tensor txt = encode_text(model, target_tokens).embedding;
    return cosine_similarity(img, txt);
}

namespace detail {

// Normalized 1-D Gaussian taps; the separable product reproduces the
// canonical normalized 11x11 window.
inline std::vector<double> gaussian_taps(int radius, double sigma) {
    std::vector<double> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += taps[i + radius];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

// Separable valid-mode Gaussian filter of one channel laid out row-major
// {h, w}; returns {h - 2r, w - 2r} values.
inline std::vector<double> gaussian_filter_valid(const std::vector<double>& channel, std::size_t h,
                                                 std::size_t w, const std::vector<double>& taps) {
    const std::size_t r = taps.size() / 2;
    const std::size_t wOut = w - 2 * r;
    std::vector<double> horiz(h * wOut);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wOut; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < taps.size(); ++k)
                acc += taps[k] * channel[y * w + x + k];
            horiz[y * wOut + x] = acc;
        }
    const std::size_t hOut = h - 2 * r;
    std::vector<double> out(hOut * wOut);
    for (std::size_t y = 0; y < hOut; ++y)
        for (std::size_t x = 0; x < wOut; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < taps.size(); ++k)
                acc += taps[k] * horiz[(y + k) * wOut + x];
            out[y * wOut + x] = acc;
        }
    return out;
}

} // namespace detail

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), constants
// C1 = 0.01^2 and C2 = 0.03^2 at unit dynamic range, channels averaged.
// Windows are valid-mode: the image must be at least 11 pixels on each side.
inline double ssim(const Tensor& x, const Tensor& y) {
    if (!x.same_dims(y))
        throw ParameterError("ssim: image dims differ");
    if (!is_image_shape(x))
        throw ParameterError("ssim: HxWxC images required");
    const std::size_t h = x.dims()[0], w = x.dims()[1], ch = x.dims()[2];
    constexpr int kRadius = 5;
    if (h < 2 * kRadius + 1 || w < 2 * kRadius + 1)
        throw ParameterError("ssim: image smaller than the 11x11 window");
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const auto taps = detail::gaussian_taps(kRadius, 1.5);

    double channel_mean_sum = 0.0;
    std::vector<double> a(h * w), b(h * w), aa(h * w), bb(h * w), ab(h * w);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t i = 0; i < h * w; ++i) {
            const double xv = x[i * ch + c];
            const double yv = y[i * ch + c];
            a[i] = xv;
            b[i] = yv;
            aa[i] = xv * xv;
            bb[i] = yv * yv;
            ab[i] = xv * yv;
        }
        const auto mu_x = detail::gaussian_filter_valid(a, h, w, taps);
        const auto mu_y = detail::gaussian_filter_valid(b, h, w, taps);
        const auto e_xx = detail::gaussian_filter_valid(aa, h, w, taps);
        const auto e_yy = detail::gaussian_filter_valid(bb, h, w, taps);
        const auto e_xy = detail::gaussian_filter_valid(ab, h, w, taps);

        double acc = 0.0;
        for (std::size_t i = 0; i < mu_x.size(); ++i) {
            const double mx = mu_x[i], my = mu_y[i];
            const double vx = e_xx[i] - mx * mx;
            const double vy = e_yy[i] - my * my;
            const double cov = e_xy[i] - mx * my;
            const double num = (2.0 * mx * my + kC1) * (2.0 * cov + kC2);
            const double den = (mx * mx + my * my + kC1) * (vx + vy + kC2);
            acc += num / den;
        }
        channel_mean_sum += acc / static_cast<double>(mu_x.size());
    }
    return channel_mean_sum / static_cast<double>(ch);
}

// 10 * log10(1 / MSE) at unit dynamic range, capped at 100 dB when MSE = 0.
inline double psnr(const Tensor& x, const Tensor& y) {
    if (!x.same_dims(y))
        throw ParameterError("psnr: image dims differ");
    constexpr double kCap = 100.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(x.size());
    if (mse == 0.0) return kCap;
    return std::min(kCap, 10.0 * std::log10(1.0 / mse));
}

inline double linf_distance(const Tensor& x, const Tensor& y) {
    if (!x.same_dims(y))
        throw ParameterError("linf: image dims differ");
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        m = std::max(m, std::fabs(x[i] - y[i]));
    return m;
}

// Quantizes each channel to 2^bits levels on the [0,1] grid, round half away
// from zero. Idempotent.
inline Tensor bit_reduce(const Tensor& x, int bits) {
    if (bits < 1 || bits > 8)
        throw ParameterError("bit_reduce: bits must lie in [1, 8]");
    const double levels = std::pow(2.0, bits) - 1.0;
    Tensor out = x;
    for (double& v : out.values())
        v = std::floor(v * levels + 0.5) / levels;
    return out;
}

struct QualityReport {
    double ssim = 1.0;
    double psnr = 100.0;
    double linf = 0.0;
};

inline QualityReport quality_report(const Tensor& clean, const Tensor& adversarial) {
    return QualityReport{ssim(clean, adversarial), psnr(clean, adversarial),
                         linf_distance(clean, adversarial)};
}

struct NamedImage {
    std::string id;
    Tensor image;
};

struct DefenseTransform {
    std::string name;
    std::function<Tensor(const Tensor&)> apply;
};

struct TransferRow {
    std::string image_id;
    std::uint64_t surrogate_seed = 0;
    std::string defense;
    double clean_alignment = 0.0;
    double adv_alignment = 0.0;
    double delta_alignment = 0.0;
};

struct TransferAggregate {
    std::uint64_t surrogate_seed = 0;
    std::string defense;
    double median_clean = 0.0;
    double median_adv = 0.0;
    double median_delta = 0.0;
};

struct TransferReport {
    std::vector<TransferRow> rows;
    std::vector<TransferAggregate> aggregates;
};

// Clean/adversarial alignment per (pair, surrogate, defense). The defense
// transform is applied to both images of a pair; "none" is always evaluated
// first. targets carries one token sequence per pair.
inline TransferReport run_transfer_eval(std::span<const NamedImage> clean,
                                        std::span<const NamedImage> adversarial,
                                        std::span<const std::vector<int>> targets,
                                        std::span<const SurrogateModel> surrogates,
                                        std::span<const DefenseTransform> defenses = {}) {
    if (clean.size() != adversarial.size() || clean.size() != targets.size())
        throw ParameterError("transfer eval: clean/adversarial/target lists must pair up");
    if (clean.empty())
        throw ParameterError("transfer eval: no image pairs");
    if (surrogates.empty())
        throw ParameterError("transfer eval: at least one surrogate required");

    std::vector<DefenseTransform> all;
    all.push_back(DefenseTransform{"none", {}});
    all.insert(all.end(), defenses.begin(), defenses.end());

    TransferReport report;
    for (const auto& model : surrogates) {
        for (const auto& defense : all) {
            std::vector<double> cs, as, ds;
            for (std::size_t i = 0; i < clean.size(); ++i) {
                Tensor c = defense.apply ? defense.apply(clean[i].image) : clean[i].image;
                Tensor a = defense.apply ? defense.apply(adversarial[i].image) : adversarial[i].image;
                TransferRow row;
                row.image_id = clean[i].id;
                row.surrogate_seed = model.config.seed;
                row.defense = defense.name;
                row.clean_alignment = alignment_score(model, c, targets[i]);
                row.adv_alignment = alignment_score(model, a, targets[i]);
                row.delta_alignment = row.adv_alignment - row.clean_alignment;
                cs.push_back(row.clean_alignment);
                as.push_back(row.adv_alignment);
                ds.push_back(row.delta_alignment);
                report.rows.push_back(std::move(row));
            }
            report.aggregates.push_back(TransferAggregate{model.config.seed, defense.name,
                                                          median(cs), median(as), median(ds)});
        }
    }
    return report;
}

// ---- CSV serialization (stable column order) ----

inline std::string transfer_report_csv(const TransferReport& report) {
    std::string out = "image_id,surrogate_seed,defense,clean_alignment,adv_alignment,delta_alignment\n";
    char buf[192];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), ",%llu,%s,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(r.surrogate_seed), r.defense.c_str(),
                      r.clean_alignment, r.adv_alignment, r.delta_alignment);
        out += r.image_id;
        out += buf;
    }
    return out;
}

inline std::string transfer_aggregate_csv(const TransferReport& report) {
    std::string out = "surrogate_seed,defense,median_clean,median_adv,median_delta\n";
    char buf[192];
    for (const auto& a : report.aggregates) {
        std::snprintf(buf, sizeof(buf), "%llu,%s,%.17g,%.17g,%.17g\n",
                      static_cast<unsigned long long>(a.surrogate_seed), a.defense.c_str(),
                      a.median_clean, a.median_adv, a.median_delta);
        out += buf;
    }
    return out;
}

inline std::string quality_report_csv(std::span<const std::pair<std::string, QualityReport>> rows) {
    std::string out = "image_id,ssim,psnr_db,linf\n";
    char buf[160];
    for (const auto& [id, q] : rows) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g\n", q.ssim, q.psnr, q.linf);
        out += id;
        out += buf;
    }
    return out;
}

} // namespace tta
