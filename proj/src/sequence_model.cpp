#include "ndfilter/sequence_model.hpp"

#include <cmath>
#include <numeric>

namespace ndf {

std::string to_string(Role role) {
    switch (role) {
        case Role::N: return "N";
        case Role::D: return "D";
        case Role::classifier: return "C";
    }
    return "N";
}

Role parse_role(const std::string& text) {
    if (text == "N") return Role::N;
    if (text == "D") return Role::D;
    if (text == "C") return Role::classifier;
    throw DomainError("unknown model role: " + text);
}

std::string to_string(Optimizer opt) { return opt == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& text) {
    if (text == "adam") return Optimizer::adam;
    if (text == "sgd") return Optimizer::sgd;
    throw DomainError("unknown optimizer: " + text);
}

void ModelConfig::validate() const {
    if (m_vocab < 2) throw DomainError("m_vocab must be >= 2");
    if (embed_dim < 1 || hidden_dim < 1) throw DomainError("embed_dim and hidden_dim must be >= 1");
    if (layers < 1) throw DomainError("layers must be >= 1");
    if (!(learning_rate >= 0.0)) throw DomainError("learning_rate must be non-negative");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (epochs < 0) throw DomainError("epochs must be >= 0");
}

namespace {

std::vector<const TokenizedSequence*> pointers(std::span<const TokenizedSequence> data) {
    std::vector<const TokenizedSequence*> p;
    p.reserve(data.size());
    for (const auto& s : data) p.push_back(&s);
    return p;
}

template <typename Model>
void require_finite_loss(double loss, const Model& grad) {
    if (std::isfinite(loss)) return;
    check_finite(grad, "gradient");
    throw NumericError("non-finite loss");
}

}  // namespace

double train_step(SequenceModel& model, std::span<const TokenizedSequence* const> batch,
                  SequenceOptimizer& opt) {
    if (batch.empty()) throw DomainError("train_step: empty batch");
    const LmBatch b = make_lm_batch(batch, model.config.m_vocab);
    SequenceModel grad = model.zeros_like();
    const double loss = lm_loss(model, b, &grad);
    require_finite_loss(loss, grad);
    check_finite(grad, "gradient");
    apply_update(model, grad, opt);
    return loss;
}

double train_epoch(SequenceModel& model, std::span<const TokenizedSequence> data,
                   SequenceOptimizer& opt, Rng& rng) {
    auto order = pointers(data);
    rng.shuffle(std::span(order));
    const auto bs = static_cast<std::size_t>(model.config.batch_size);
    double total = 0;
    long steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::span<const TokenizedSequence* const> batch(
            order.data() + start, std::min(bs, order.size() - start));
        long n = 0;
        for (const auto* s : batch) n += s->true_len;
        total += train_step(model, batch, opt) * static_cast<double>(n);
        steps += n;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

double validation_loss(const SequenceModel& model, std::span<const TokenizedSequence> data) {
    // No floor here: this is the training objective, not a score.
    const auto lp = sequence_log_probs(model, data, 0.0);
    double total = 0;
    long steps = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        total -= lp[i];
        steps += data[i].true_len;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

SequenceModel loss_gradient(const SequenceModel& model, std::span<const TokenizedSequence> batch) {
    const auto ptrs = pointers(batch);
    const LmBatch b = make_lm_batch(ptrs, model.config.m_vocab);
    SequenceModel grad = model.zeros_like();
    lm_loss(model, b, &grad);
    return grad;
}

double grad_check(const SequenceModel& model, std::span<const TokenizedSequence> batch,
                  double eps) {
    const auto ptrs = pointers(batch);
    const LmBatch b = make_lm_batch(ptrs, model.config.m_vocab);
    const SequenceModel analytic = loss_gradient(model, batch);

    // The difference quotient is evaluated in extended precision so its
    // rounding noise stays well below the smallest gradient entries.
    using Wide = long double;
    auto probe = cast_model<Wide>(model);
    auto params = param_blocks(probe);
    const auto grads = param_blocks(analytic);
    const Wide h = static_cast<Wide>(eps);
    double worst = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k].second;
        const auto& g = *grads[k].second;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const Wide saved = p(i);
            p(i) = saved + h;
            const Wide up = lm_loss<Wide>(probe, b, nullptr);
            p(i) = saved - h;
            const Wide down = lm_loss<Wide>(probe, b, nullptr);
            p(i) = saved;
            const double fd = static_cast<double>((up - down) / (2 * h));
            const double ga = g(i);
            const double denom = std::max({std::abs(ga), std::abs(fd), 1e-8});
            worst = std::max(worst, std::abs(ga - fd) / denom);
        }
    }
    return worst;
}

void transfer_embedding(const SequenceModel& source, SequenceModel& target) {
    if (source.backbone.embedding.rows() != target.backbone.embedding.rows() ||
        source.backbone.embedding.cols() != target.backbone.embedding.cols())
        throw ShapeError("transfer_embedding: embedding shapes differ (" +
                         std::to_string(source.backbone.embedding.rows()) + "x" +
                         std::to_string(source.backbone.embedding.cols()) + " vs " +
                         std::to_string(target.backbone.embedding.rows()) + "x" +
                         std::to_string(target.backbone.embedding.cols()) + ")");
    if (&source != &target) target.backbone.embedding = source.backbone.embedding;
    target.role = Role::D;
}

double train_step(BinaryClassifier& model, std::span<const TokenizedSequence* const> batch,
                  std::span<const double> targets, ClassifierOptimizer& opt) {
    if (batch.empty()) throw DomainError("train_step: empty batch");
    const ClsBatch b = make_cls_batch(batch, model.config.m_vocab);
    BinaryClassifier grad = model.zeros_like();
    const double loss = bce_loss(model, b, targets, &grad);
    require_finite_loss(loss, grad);
    check_finite(grad, "gradient");
    apply_update(model, grad, opt);
    return loss;
}

double train_epoch(BinaryClassifier& model, std::span<const TokenizedSequence> data,
                   std::span<const double> targets, ClassifierOptimizer& opt, Rng& rng) {
    if (targets.size() != data.size()) throw ShapeError("train_epoch: one target per sequence");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    const auto bs = static_cast<std::size_t>(model.config.batch_size);
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t n = std::min(bs, order.size() - start);
        std::vector<const TokenizedSequence*> batch;
        std::vector<double> y;
        for (std::size_t k = 0; k < n; ++k) {
            batch.push_back(&data[order[start + k]]);
            y.push_back(targets[order[start + k]]);
        }
        total += train_step(model, batch, y, opt) * static_cast<double>(n);
    }
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

}  // namespace ndf
