#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "text.hpp"

namespace vbn {

// ---------------------------------------------------------------------------
// Categorical cross-entropy over softmax outputs, with the fused gradient
// at the logits: (probs - onehot) / N. The log is clamped at 1e-12 so a
// saturated output cannot produce -inf.
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
};

inline LossResult cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) throw ShapeError("cross_entropy expects NxK probabilities, got " + shape_str(probs.shape()));
    const size_t n = probs.dim(0), k = probs.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy labels length " + std::to_string(labels.size()) + " vs batch " +
                         std::to_string(n));
    }
    LossResult r;
    r.grad_logits = probs;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<size_t>(y) >= k) {
            throw DomainError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
        }
        acc -= std::log(static_cast<double>(probs(i, static_cast<size_t>(y))) + 1e-12);
        r.grad_logits(i, static_cast<size_t>(y)) -= 1.0f;
    }
    const float inv_n = 1.0f / static_cast<float>(n);
    for (size_t i = 0; i < r.grad_logits.numel(); ++i) r.grad_logits.at(i) *= inv_n;
    r.loss = acc / static_cast<double>(n);
    return r;
}

inline size_t argmax_row(const Tensor& probs, size_t row) {
    size_t best = 0;
    float best_v = probs(row, 0);
    for (size_t j = 1; j < probs.dim(1); ++j) {
        if (probs(row, j) > best_v) {  // ties keep the lowest class index
            best_v = probs(row, j);
            best = j;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// RMSProp: s <- rho*s + (1-rho)*g^2; w <- w - lr*g/(sqrt(s) + eps).
// ---------------------------------------------------------------------------

inline void rmsprop_step(Tensor& param, const Tensor& grad, Tensor& accum, double lr, float rho, float eps) {
    if (!param.same_shape(grad) || !param.same_shape(accum)) {
        throw ShapeError("rmsprop shape mismatch: param " + shape_str(param.shape()) + ", grad " +
                         shape_str(grad.shape()));
    }
    const float flr = static_cast<float>(lr);
    for (size_t i = 0; i < param.numel(); ++i) {
        const float g = grad.at(i);
        const float s = rho * accum.at(i) + (1.0f - rho) * g * g;
        accum.at(i) = s;
        param.at(i) -= flr * g / (std::sqrt(s) + eps);
    }
}

struct RmsProp {
    float rho = 0.9f;
    float eps = 1e-7f;
    std::vector<Tensor> accum;

    void init(const std::vector<Tensor*>& params) {
        accum.clear();
        for (const Tensor* p : params) accum.emplace_back(p->shape());
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
        if (params.size() != grads.size() || params.size() != accum.size()) {
            throw ShapeError("rmsprop state does not cover the parameter list");
        }
        for (size_t i = 0; i < params.size(); ++i) rmsprop_step(*params[i], grads[i], accum[i], lr, rho, eps);
    }
};

// ---------------------------------------------------------------------------
// Step-decay learning rate: initial * factor^floor(epoch/step), clamped at
// the floor.
// ---------------------------------------------------------------------------

struct LrSchedule {
    double initial = 0.001;
    double factor = 0.5;
    size_t step_epochs = 5;
    double floor = 1e-6;
};

inline double lr_at_epoch(const LrSchedule& s, size_t epoch) {
    if (s.floor <= 0.0) throw ConfigError("lr floor must be positive");
    if (s.factor <= 0.0 || s.factor >= 1.0) throw ConfigError("lr factor must be in (0, 1)");
    if (s.step_epochs == 0) throw ConfigError("lr step must be >= 1 epoch");
    const double k = static_cast<double>(epoch / s.step_epochs);
    const double lr = s.initial * std::pow(s.factor, k);
    return std::max(lr, s.floor);
}

// ---------------------------------------------------------------------------
// The epoch loop. Data arrives through a DataSource so the loop stays
// independent of how batches are decoded; fetch must be deterministic in
// the requested indices.
// ---------------------------------------------------------------------------

struct DataSource {
    size_t count = 0;
    std::function<std::pair<Tensor, std::vector<int>>(const std::vector<size_t>&)> fetch;
};

struct TrainOptions {
    size_t epochs = 25;
    size_t batch_size = 32;
    LrSchedule schedule;
    float rmsprop_rho = 0.9f;
    float rmsprop_eps = 1e-7f;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    Checkpoint last;
    Checkpoint best;  // highest validation accuracy, ties broken by lower validation loss
    size_t best_epoch = 0;
};

// Training metrics are the running averages over the train-mode batches of
// the epoch; validation metrics come from a full inference pass.
inline TrainResult train_epochs(Model& model, const DataSource& train_src, const DataSource& val_src,
                                const TrainOptions& opts, Rng& rng,
                                const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
    if (opts.batch_size < 2) {
        throw ConfigError("batch size must be >= 2 for train-mode batchnorm, got " +
                          std::to_string(opts.batch_size));
    }
    if (train_src.count == 0 || val_src.count == 0) throw DomainError("training and validation sets must be non-empty");

    auto params = model_parameters(model);
    RmsProp opt;
    opt.rho = opts.rmsprop_rho;
    opt.eps = opts.rmsprop_eps;
    opt.init(params);

    TrainResult result;
    double best_acc = -1.0, best_loss = 0.0;

    std::vector<size_t> order(train_src.count);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const double lr = lr_at_epoch(opts.schedule, epoch);
        rng.shuffle(order);

        double loss_acc = 0.0;
        size_t correct = 0, seen = 0;
        for (size_t start = 0; start < order.size(); start += opts.batch_size) {
            const size_t end = std::min(order.size(), start + opts.batch_size);
            if (end - start < 2) continue;  // train-mode batchnorm cannot standardize one sample
            std::vector<size_t> batch(order.begin() + static_cast<ptrdiff_t>(start),
                                      order.begin() + static_cast<ptrdiff_t>(end));
            auto [x, y] = train_src.fetch(batch);
            ForwardCache cache;
            Tensor probs = model_forward(model, x, Mode::Train, &rng, &cache);
            LossResult loss = cross_entropy(probs, y);
            BackwardResult grads = model_backward(model, cache, loss.grad_logits);
            opt.step(params, grads.param_grads, lr);

            loss_acc += loss.loss * static_cast<double>(batch.size());
            for (size_t i = 0; i < batch.size(); ++i) {
                if (argmax_row(probs, i) == static_cast<size_t>(y[i])) ++correct;
            }
            seen += batch.size();
        }
        if (seen == 0) throw DomainError("no trainable batch of size >= 2; add samples or shrink the batch size");

        // validation pass in inference mode
        double val_loss_acc = 0.0;
        size_t val_correct = 0;
        {
            std::vector<size_t> idx;
            for (size_t start = 0; start < val_src.count; start += opts.batch_size) {
                const size_t end = std::min(val_src.count, start + opts.batch_size);
                idx.clear();
                for (size_t i = start; i < end; ++i) idx.push_back(i);
                auto [x, y] = val_src.fetch(idx);
                Tensor probs = model_forward(model, x, Mode::Infer);
                LossResult loss = cross_entropy(probs, y);
                val_loss_acc += loss.loss * static_cast<double>(idx.size());
                for (size_t i = 0; i < idx.size(); ++i) {
                    if (argmax_row(probs, i) == static_cast<size_t>(y[i])) ++val_correct;
                }
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_acc / static_cast<double>(seen);
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        rec.val_loss = val_loss_acc / static_cast<double>(val_src.count);
        rec.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_src.count);
        rec.lr = lr;
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_acc > best_acc || (rec.val_acc == best_acc && rec.val_loss < best_loss)) {
            best_acc = rec.val_acc;
            best_loss = rec.val_loss;
            result.best = checkpoint_from_model(model, opt.accum, epoch + 1, result.history);
            result.best_epoch = epoch;
        }
    }
    result.last = checkpoint_from_model(model, opt.accum, opts.epochs, result.history);
    return result;
}

// ---------------------------------------------------------------------------
// Report emission: an aligned human table and a tab-separated machine form.
// ---------------------------------------------------------------------------

inline std::string report_table(const std::vector<EpochRecord>& history) {
    char buf[160];
    std::string out = "epoch  train_loss  train_acc  val_loss  val_acc  lr\n";
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%5zu  %10.4f  %9.4f  %8.4f  %7.4f  %.8f\n", r.epoch, r.train_loss,
                      r.train_acc, r.val_loss, r.val_acc, r.lr);
        out += buf;
    }
    return out;
}

inline std::string report_tsv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\tlr\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "\t" + fmt_double(r.train_loss) + "\t" + fmt_double(r.train_acc) + "\t" +
               fmt_double(r.val_loss) + "\t" + fmt_double(r.val_acc) + "\t" + fmt_double(r.lr) + "\n";
    }
    return out;
}

}  // namespace vbn
