#pragma once

// Training: Dice + cross-entropy losses (with deep-supervision weighting),
// Adam-style and SGD-momentum optimizers, gradient clipping, checkpointing,
// and the k-fold training driver. Single-threaded and deterministic under a
// fixed seed.

#include <filesystem>
#include <optional>
#include <sstream>

#include "stenoseg/data.hpp"
#include "stenoseg/metrics.hpp"
#include "stenoseg/models.hpp"

namespace stenoseg {

struct LossConfig {
    double dice_weight = 1.0;
    double ce_weight = 1.0;
    double gamma = 0.5;  // deep-supervision decay; 0 means primary only
    double eps = 1.0;    // Dice smooth term

    void validate() const {
        if (dice_weight < 0 || ce_weight < 0 || dice_weight + ce_weight <= 0)
            throw NumericError("loss weights must be nonnegative with a positive sum");
        if (gamma < 0 || gamma > 1) throw NumericError("gamma must lie in [0,1]");
    }
};

struct OptimConfig {
    enum class Algo { Adam, SgdMomentum };
    Algo algo = Algo::Adam;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;  // adam
    double momentum = 0.9;              // sgd
    double weight_decay = 1e-5;
    double clip_norm = 12.0;  // 0 disables clipping
    std::size_t steps = 500;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;

    void validate() const {
        if (lr <= 0) throw NumericError("learning rate must be positive");
        if (steps < 1) throw NumericError("step count must be >= 1");
        if (batch_size < 1) throw NumericError("batch size must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Losses. logits: [B,2,H,W]; mask: [B,H,W] with values in {0,1}, constant.

namespace detail {
template <class T>
inline void check_loss_shapes(const Tensor<T>& logits, const Tensor<T>& mask) {
    if (logits.rank() != 4 || logits.extent(1) != 2)
        throw ShapeError("loss: logits must be [B,2,H,W]");
    if (mask.rank() != 3 || mask.extent(0) != logits.extent(0) ||
        mask.extent(1) != logits.extent(2) || mask.extent(2) != logits.extent(3))
        throw ShapeError("loss: mask shape does not match logits");
    for (T v : mask.values())
        if (v != T(0) && v != T(1)) throw ShapeError("loss: mask must be binary");
}

// foreground softmax probability, [B,1,HW]
template <class T>
inline Tensor<T> foreground_prob(const Tensor<T>& logits) {
    const std::size_t B = logits.extent(0);
    const std::size_t HW = logits.extent(2) * logits.extent(3);
    auto p = softmax(reshape(logits, Shape{B, 2, HW}), 1);
    return index_select_l(p, {1});
}
}  // namespace detail

template <class T>
inline Tensor<T> dice_loss(const Tensor<T>& logits, const Tensor<T>& mask, double eps = 1.0) {
    detail::check_loss_shapes(logits, mask);
    const std::size_t B = logits.extent(0);
    const std::size_t HW = logits.extent(2) * logits.extent(3);
    auto fg = detail::foreground_prob(logits);
    auto m = reshape(mask, Shape{B, 1, HW});
    auto inter = sum(mul(fg, m));
    auto num = add_scalar(scale(inter, T(2)), T(eps));
    auto den = add_scalar(add(sum(fg), sum(m)), T(eps));
    return add_scalar(neg(divide(num, den)), T(1));
}

template <class T>
inline Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const Tensor<T>& mask) {
    detail::check_loss_shapes(logits, mask);
    const std::size_t B = logits.extent(0);
    const std::size_t HW = logits.extent(2) * logits.extent(3);
    auto ls = log_softmax(reshape(logits, Shape{B, 2, HW}), 1);
    auto m = reshape(mask, Shape{B, 1, HW});
    std::vector<T> inv(m.values().size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = T(1) - m.values()[i];
    auto m_inv = Tensor<T>(Shape{B, 1, HW}, std::move(inv), false);
    auto picked = add(mul(index_select_l(ls, {0}), m_inv), mul(index_select_l(ls, {1}), m));
    return neg(mean(picked));
}

// Nearest-neighbor downscale of the batch mask to an auxiliary resolution.
template <class T>
inline Tensor<T> downscale_mask(const Tensor<T>& mask, std::size_t dh, std::size_t dw) {
    const std::size_t B = mask.extent(0), H = mask.extent(1), W = mask.extent(2);
    std::vector<T> out(B * dh * dw);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<T> plane(mask.values().begin() + long(b * H * W),
                             mask.values().begin() + long((b + 1) * H * W));
        auto small = resize_nearest(plane, H, W, dh, dw);
        std::copy(small.begin(), small.end(), out.begin() + long(b * dh * dw));
    }
    return Tensor<T>(Shape{B, dh, dw}, std::move(out), false);
}

// Weighted deep-supervision sum: level 0 is the primary output, auxiliary
// level k gets weight gamma^(k+1); the total is normalized by the weight sum.
template <class T>
inline Tensor<T> combined_loss(const Tensor<T>& primary, const std::vector<Tensor<T>>& aux,
                               const Tensor<T>& mask, const LossConfig& cfg) {
    cfg.validate();
    auto term = [&](const Tensor<T>& logits, const Tensor<T>& m) {
        Tensor<T> acc = Tensor<T>::scalar(T(0));
        if (cfg.dice_weight > 0)
            acc = add(acc, scale(dice_loss(logits, m, cfg.eps), T(cfg.dice_weight)));
        if (cfg.ce_weight > 0) acc = add(acc, scale(cross_entropy_loss(logits, m), T(cfg.ce_weight)));
        return acc;
    };
    Tensor<T> total = term(primary, mask);
    double wsum = 1.0;
    double w = 1.0;
    for (const auto& a : aux) {
        w *= cfg.gamma;
        if (w == 0.0) break;
        auto m = downscale_mask(mask, a.extent(2), a.extent(3));
        total = add(total, scale(term(a, m), T(w)));
        wsum += w;
    }
    return scale(total, T(1.0 / wsum));
}

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
struct Optimizer {
    OptimConfig cfg;
    std::vector<Tensor<T>> params;
    std::vector<std::vector<T>> m1, m2;  // adam moments / sgd velocity (m1 only)
    std::size_t step_count = 0;

    Optimizer() = default;
    Optimizer(OptimConfig c, std::vector<Tensor<T>> p) : cfg(c), params(std::move(p)) {
        cfg.validate();
        m1.resize(params.size());
        m2.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m1[i].assign(params[i].numel(), T(0));
            if (cfg.algo == OptimConfig::Algo::Adam) m2[i].assign(params[i].numel(), T(0));
        }
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    // Global-norm gradient clipping, then one update.
    void step() {
        if (cfg.clip_norm > 0) {
            double sq = 0;
            for (const auto& p : params)
                for (T g : p.grad()) sq += double(g) * double(g);
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) {
                const T s = T(cfg.clip_norm / norm);
                for (auto& p : params)
                    for (T& g : p.grad()) g *= s;
            }
        }
        ++step_count;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& val = params[i].values();
            const auto& grad = params[i].grad();
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double g = double(grad[j]) + cfg.weight_decay * double(val[j]);
                if (cfg.algo == OptimConfig::Algo::Adam) {
                    const double m = cfg.beta1 * double(m1[i][j]) + (1 - cfg.beta1) * g;
                    const double v = cfg.beta2 * double(m2[i][j]) + (1 - cfg.beta2) * g * g;
                    m1[i][j] = T(m);
                    m2[i][j] = T(v);
                    const double mh = m / (1 - std::pow(cfg.beta1, double(step_count)));
                    const double vh = v / (1 - std::pow(cfg.beta2, double(step_count)));
                    val[j] = T(double(val[j]) - cfg.lr * mh / (std::sqrt(vh) + 1e-8));
                } else {
                    const double v = cfg.momentum * double(m1[i][j]) + g;
                    m1[i][j] = T(v);
                    val[j] = T(double(val[j]) - cfg.lr * v);
                }
            }
        }
    }
};

// Name of the first parameter whose gradient holds a non-finite value.
template <class T>
inline std::optional<std::string> first_nonfinite_gradient(const ParamRegistry<T>& reg) {
    for (const auto& [name, t] : reg.items)
        for (T g : t.grad())
            if (!std::isfinite(double(g))) return name;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Batching and one optimization step

template <class T>
inline std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ShapeError("make_batch: empty batch");
    const std::size_t S = samples[0]->size();
    const std::size_t B = samples.size();
    std::vector<T> imgs(B * S * S), masks(B * S * S);
    for (std::size_t b = 0; b < B; ++b) {
        if (samples[b]->size() != S) throw ShapeError("make_batch: mixed sample sizes");
        for (std::size_t i = 0; i < S * S; ++i) {
            imgs[b * S * S + i] = T(samples[b]->image.values()[i]);
            masks[b * S * S + i] = T(samples[b]->mask[i]);
        }
    }
    return {Tensor<T>(Shape{B, 1, S, S}, std::move(imgs), false),
            Tensor<T>(Shape{B, S, S}, std::move(masks), false)};
}

template <class T>
inline double train_step(Network<T>& net, Optimizer<T>& opt, const Tensor<T>& images,
                         const Tensor<T>& mask, const LossConfig& lcfg) {
    opt.zero_grad();
    auto out = net.forward(images);
    auto loss = combined_loss(out.primary, out.aux, mask, lcfg);
    const double loss_value = double(loss.item());
    backward(loss);
    if (!std::isfinite(loss_value) || first_nonfinite_gradient(net.registry)) {
        const auto bad = first_nonfinite_gradient(net.registry);
        throw NumericError("non-finite loss/gradient at step " +
                           std::to_string(opt.step_count + 1) +
                           (bad ? ("; first bad parameter gradient: " + *bad)
                                : std::string("; loss non-finite")));
    }
    opt.step();
    return loss_value;
}

// ---------------------------------------------------------------------------
// Checkpointing: magic "CKPT1", version, step, RNG stream state, named
// parameter table, optimizer moments.

template <class T>
inline void checkpoint_save(const std::string& path, const ParamRegistry<T>& reg,
                            const Optimizer<T>& opt, const std::mt19937_64& rng,
                            std::size_t step) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write checkpoint: " + path);
    os.write("CKPT1", 5);
    detail::write_raw(os, std::uint32_t(1));  // format version
    detail::write_raw(os, std::uint64_t(step));
    detail::write_raw(os, std::uint64_t(opt.step_count));
    std::ostringstream rs;
    rs << rng;
    const std::string rng_state = rs.str();
    detail::write_raw(os, std::uint32_t(rng_state.size()));
    os.write(rng_state.data(), std::streamsize(rng_state.size()));
    detail::write_raw(os, std::uint8_t(opt.cfg.algo == OptimConfig::Algo::Adam ? 1 : 0));
    detail::write_raw(os, std::uint32_t(reg.items.size()));
    for (std::size_t i = 0; i < reg.items.size(); ++i) {
        const auto& [name, t] = reg.items[i];
        detail::write_raw(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        save_tensor(os, t);
        auto write_vec = [&](const std::vector<T>& v) {
            detail::write_raw(os, std::uint64_t(v.size()));
            os.write(reinterpret_cast<const char*>(v.data()),
                     std::streamsize(v.size() * sizeof(T)));
        };
        write_vec(i < opt.m1.size() ? opt.m1[i] : std::vector<T>{});
        write_vec(i < opt.m2.size() ? opt.m2[i] : std::vector<T>{});
    }
    if (!os) throw IOError("short checkpoint write: " + path);
}

// Loads parameter values and moments into an existing registry/optimizer; the
// parameter-name table must match exactly.
template <class T>
inline void checkpoint_load(const std::string& path, ParamRegistry<T>& reg, Optimizer<T>& opt,
                            std::mt19937_64& rng, std::size_t& step) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open checkpoint: " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, "CKPT1", 5) != 0)
        throw IOError("bad checkpoint magic (version mismatch?): " + path);
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != 1) throw IOError("unsupported checkpoint version " + std::to_string(version));
    step = std::size_t(detail::read_raw<std::uint64_t>(is));
    opt.step_count = std::size_t(detail::read_raw<std::uint64_t>(is));
    const auto rng_len = detail::read_raw<std::uint32_t>(is);
    std::string rng_state(rng_len, '\0');
    is.read(rng_state.data(), std::streamsize(rng_len));
    std::istringstream rs(rng_state);
    rs >> rng;
    const auto algo = detail::read_raw<std::uint8_t>(is);
    opt.cfg.algo = algo ? OptimConfig::Algo::Adam : OptimConfig::Algo::SgdMomentum;
    const auto count = detail::read_raw<std::uint32_t>(is);
    if (count != reg.items.size())
        throw IOError("checkpoint/model mismatch: parameter counts differ");
    for (std::size_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_raw<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), std::streamsize(name_len));
        if (name != reg.items[i].first)
            throw IOError("checkpoint/model mismatch: parameter '" + name + "' vs '" +
                          reg.items[i].first + "'");
        auto t = load_tensor<T>(is);
        if (t.shape() != reg.items[i].second.shape())
            throw IOError("checkpoint/model mismatch: shape of " + name);
        reg.items[i].second.values() = t.values();
        auto read_vec = [&](std::vector<T>& v) {
            const auto n = detail::read_raw<std::uint64_t>(is);
            v.resize(n);
            is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(T)));
            if (!is) throw IOError("truncated checkpoint: " + path);
        };
        read_vec(opt.m1[i]);
        read_vec(opt.m2[i]);
    }
}

// ---------------------------------------------------------------------------
// Evaluation and the fold driver

template <class T>
inline MetricsReport evaluate(const Network<T>& net, const std::vector<const Sample*>& samples,
                              double tau = 0.5, const std::string& model_name = "",
                              std::vector<std::vector<std::uint8_t>>* pred_out = nullptr) {
    if (samples.empty()) throw ShapeError("evaluate: no samples");
    std::vector<ConfusionCounts> per_image;
    for (const Sample* s : samples) {
        auto [img, msk] = make_batch<T>({s});
        auto out = net.forward(img);
        auto pred = thresholded_mask(out.primary, tau);
        per_image.push_back(confusion(pred, s->mask));
        if (pred_out) pred_out->push_back(std::move(pred));
    }
    std::size_t params = net.count_params();
    return aggregate(per_image, model_name, params);
}

struct TrainResult {
    std::vector<double> losses;         // one entry per step
    double best_f1 = 0.0;
    std::size_t best_step = 0;
    std::size_t steps_run = 0;
    std::string checkpoint_path;        // empty if no out_dir given
};

// Trains on `train`, evaluates on `val` every `eval_every` steps, keeps the
// best-F1 checkpoint, and stops early once `target_f1` is reached (0 =
// never). Batch order is a seeded shuffle, reshuffled each epoch.
template <class T>
inline TrainResult run_training(Network<T>& net, Optimizer<T>& opt,
                                const std::vector<const Sample*>& train,
                                const std::vector<const Sample*>& val, const LossConfig& lcfg,
                                const std::string& out_dir = "", std::size_t eval_every = 25,
                                double target_f1 = 0.0, std::ostream* metrics_log = nullptr,
                                std::size_t fold_index = 0) {
    if (train.empty()) throw ShapeError("run_training: empty training set");
    lcfg.validate();
    std::mt19937_64 rng(opt.cfg.seed);
    TrainResult res;
    if (metrics_log) *metrics_log << "epoch,fold,loss,precision,recall,f1\n";

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    double running_loss = 0.0;
    std::size_t running_n = 0, eval_index = 0;

    const std::string ckpt =
        out_dir.empty() ? std::string() : out_dir + "/best.ckpt";
    for (std::size_t step = 1; step <= opt.cfg.steps; ++step) {
        std::vector<const Sample*> batch;
        for (std::size_t b = 0; b < opt.cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(train[order[cursor++]]);
        }
        auto [img, msk] = make_batch<T>(batch);
        const double loss = train_step(net, opt, img, msk, lcfg);
        res.losses.push_back(loss);
        running_loss += loss;
        ++running_n;
        res.steps_run = step;

        if (step % eval_every == 0 || step == opt.cfg.steps) {
            auto report = evaluate(net, val.empty() ? train : val);
            const double f1 =
                report.aggregate_metrics.f1.defined ? report.aggregate_metrics.f1.value : 0.0;
            if (metrics_log) {
                char line[160];
                std::snprintf(line, sizeof line, "%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", ++eval_index,
                              fold_index, running_loss / double(running_n),
                              report.aggregate_metrics.precision.defined
                                  ? report.aggregate_metrics.precision.value
                                  : 0.0,
                              report.aggregate_metrics.recall.defined
                                  ? report.aggregate_metrics.recall.value
                                  : 0.0,
                              f1);
                *metrics_log << line;
            } else {
                ++eval_index;
            }
            running_loss = 0.0;
            running_n = 0;
            if (f1 > res.best_f1 || res.best_step == 0) {
                res.best_f1 = f1;
                res.best_step = step;
                if (!ckpt.empty()) {
                    checkpoint_save(ckpt, net.registry, opt, rng, step);
                    res.checkpoint_path = ckpt;
                }
            }
            if (target_f1 > 0 && f1 >= target_f1) break;
        }
    }
    return res;
}

// One fold of a cross-validation plan over prepared samples.
template <class T>
inline TrainResult run_fold(const ModelSpec& spec, const std::vector<Sample>& samples,
                            const FoldPlan& plan, std::size_t fold_index,
                            const OptimConfig& ocfg, const LossConfig& lcfg,
                            const std::string& out_dir, std::ostream* metrics_log = nullptr,
                            double target_f1 = 0.0, std::size_t eval_every = 25) {
    if (fold_index >= plan.folds.size()) throw DataError("fold index out of range");
    const auto& fold = plan.folds[fold_index];
    if (fold.train_ids.empty() || fold.validation_ids.empty())
        throw DataError("empty fold");
    auto resolve = [&](const std::vector<std::string>& ids) {
        std::vector<const Sample*> out;
        for (const auto& id : ids) {
            const Sample* found = nullptr;
            for (const auto& s : samples)
                if (s.id == id) found = &s;
            if (!found) throw DataError("fold id not among prepared samples: " + id);
            out.push_back(found);
        }
        return out;
    };
    auto train = resolve(fold.train_ids);
    auto val = resolve(fold.validation_ids);
    auto net = build<T>(spec, ocfg.seed);
    Optimizer<T> opt(ocfg, net->parameters());
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    return run_training(*net, opt, train, val, lcfg, out_dir, eval_every, target_f1, metrics_log,
                        fold_index);
}

}  // namespace stenoseg
