#ifndef NDFILTER_LSTM_HPP
#define NDFILTER_LSTM_HPP

// Embedding + stacked LSTM (no peepholes) backbone with two heads: a softmax
// next-token head for the sequence likelihood models and a single-logit head
// for the binary classifier. Gradients are computed by full backpropagation
// through time. Everything here is templated on the scalar type; the rest of
// the library instantiates it with double.

#include "ndfilter/error.hpp"
#include "ndfilter/random.hpp"
#include "ndfilter/tokenize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ndf {

enum class Optimizer { adam, sgd };
enum class Role { N, D, classifier };

std::string to_string(Role role);
Role parse_role(const std::string& text);
std::string to_string(Optimizer opt);
Optimizer parse_optimizer(const std::string& text);

struct ModelConfig {
    int m_vocab = 4096;
    int embed_dim = 512;
    int hidden_dim = 300;
    int layers = 2;
    double learning_rate = 0.005;
    int batch_size = 512;
    int epochs = 30;
    std::uint64_t seed = 1;
    Optimizer optimizer = Optimizer::adam;
    double clip_norm = 5.0;  // <= 0 disables clipping

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One LSTM layer. Gate rows are stacked in the order input, forget, output,
/// candidate: rows [0,H) drive i, [H,2H) f, [2H,3H) o, [3H,4H) g.
template <typename Scalar>
struct LstmLayer {
    Mat<Scalar> w_x;  // 4H x in
    Mat<Scalar> w_h;  // 4H x H
    Mat<Scalar> b;    // 4H x 1

    int hidden() const { return static_cast<int>(w_h.cols()); }
};

template <typename Scalar>
inline Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// Shared embedding + stacked LSTM.
template <typename Scalar>
struct Backbone {
    Mat<Scalar> embedding;  // m_vocab x embed_dim
    std::vector<LstmLayer<Scalar>> layers;

    static Backbone zeros(const ModelConfig& cfg) {
        Backbone net;
        net.embedding = Mat<Scalar>::Zero(cfg.m_vocab, cfg.embed_dim);
        int in = cfg.embed_dim;
        for (int l = 0; l < cfg.layers; ++l) {
            const int H = cfg.hidden_dim;
            net.layers.push_back({Mat<Scalar>::Zero(4 * H, in), Mat<Scalar>::Zero(4 * H, H),
                                  Mat<Scalar>::Zero(4 * H, 1)});
            in = H;
        }
        return net;
    }

    int hidden() const { return layers.back().hidden(); }
    int embed_dim() const { return static_cast<int>(embedding.cols()); }
    int vocab() const { return static_cast<int>(embedding.rows()); }

    template <typename Self, typename F>
    static void for_each(Self& self, F&& f) {
        f(std::string("embedding"), self.embedding);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            const std::string p = "lstm" + std::to_string(l) + ".";
            f(p + "w_x", self.layers[l].w_x);
            f(p + "w_h", self.layers[l].w_h);
            f(p + "b", self.layers[l].b);
        }
    }
};

/// Fills a matrix with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
void init_uniform(Mat<Scalar>& m, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
}

template <typename Scalar>
void init_backbone(Backbone<Scalar>& net, Rng& rng) {
    // One-hot lookup: the embedding's fan-in is the vocabulary size.
    init_uniform(net.embedding, net.vocab(), rng);
    for (auto& layer : net.layers) {
        const int H = layer.hidden();
        init_uniform(layer.w_x, H, rng);
        init_uniform(layer.w_h, H, rng);
        init_uniform(layer.b, H, rng);
    }
}

/// One cell step over a batch (columns). Writes post-activation gates, the new
/// cell state, tanh of the cell state and the new hidden state.
template <typename Scalar>
void lstm_cell(const LstmLayer<Scalar>& p, const Mat<Scalar>& x, const Mat<Scalar>& h_prev,
               const Mat<Scalar>& c_prev, Mat<Scalar>& gates, Mat<Scalar>& c, Mat<Scalar>& tanh_c,
               Mat<Scalar>& h) {
    const Eigen::Index H = p.hidden();
    gates.noalias() = p.w_x * x;
    gates.noalias() += p.w_h * h_prev;
    gates.colwise() += p.b.col(0);
    gates.topRows(3 * H) = gates.topRows(3 * H).unaryExpr([](Scalar z) { return sigmoid(z); });
    gates.bottomRows(H) = gates.bottomRows(H).array().tanh();
    c = gates.middleRows(H, H).cwiseProduct(c_prev) +
        gates.topRows(H).cwiseProduct(gates.bottomRows(H));
    tanh_c = c.array().tanh();
    h = gates.middleRows(2 * H, H).cwiseProduct(tanh_c);
}

/// Single-vector convenience wrapper returning (h_t, c_t).
template <typename Scalar>
std::pair<Vec<Scalar>, Vec<Scalar>> cell_forward(const Vec<Scalar>& x, const Vec<Scalar>& h_prev,
                                                 const Vec<Scalar>& c_prev,
                                                 const LstmLayer<Scalar>& p) {
    if (x.size() != p.w_x.cols() || h_prev.size() != p.hidden() || c_prev.size() != p.hidden())
        throw ShapeError("cell_forward: input shapes do not match layer");
    Mat<Scalar> gates, c, tanh_c, h;
    lstm_cell<Scalar>(p, x, h_prev, c_prev, gates, c, tanh_c, h);
    return {h.col(0), c.col(0)};
}

/// Recurrent state carried between steps for streaming (inference) use.
template <typename Scalar>
struct BackboneState {
    std::vector<Mat<Scalar>> h, c;
    Mat<Scalar> x, gates, tanh_c, h_new, c_new;

    void reset(const Backbone<Scalar>& net, Eigen::Index batch) {
        h.assign(net.layers.size(), Mat<Scalar>::Zero(net.hidden(), batch));
        c = h;
        x.resize(net.embed_dim(), batch);
    }

    /// Advances every layer by one step; returns the top hidden state.
    const Mat<Scalar>& step(const Backbone<Scalar>& net, std::span<const TokenId> tokens) {
        for (std::size_t b = 0; b < tokens.size(); ++b)
            x.col(static_cast<Eigen::Index>(b)) = net.embedding.row(tokens[b]).transpose();
        const Mat<Scalar>* in = &x;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            lstm_cell<Scalar>(net.layers[l], *in, h[l], c[l], gates, c_new, tanh_c, h_new);
            h[l].swap(h_new);
            c[l].swap(c_new);
            in = &h[l];
        }
        return h.back();
    }
};

/// Forward cache for backpropagation through time. Indexed [layer][step].
template <typename Scalar>
struct BackboneTape {
    Eigen::Index steps = 0, batch = 0;
    std::vector<Mat<Scalar>> inputs;  // layer-0 input per step
    std::vector<std::vector<Mat<Scalar>>> gates, cells, tanh_cells, hiddens;
};

/// `tokens` is steps x batch: the input symbol fed at each step.
template <typename Scalar>
void backbone_forward(const Backbone<Scalar>& net, const Eigen::MatrixXi& tokens,
                      BackboneTape<Scalar>& tape) {
    const auto S = tokens.rows(), B = tokens.cols();
    const auto L = net.layers.size();
    const Eigen::Index H = net.hidden();
    tape.steps = S;
    tape.batch = B;
    tape.inputs.assign(static_cast<std::size_t>(S), Mat<Scalar>(net.embed_dim(), B));
    tape.gates.assign(L, std::vector<Mat<Scalar>>(static_cast<std::size_t>(S)));
    tape.cells = tape.tanh_cells = tape.hiddens = tape.gates;

    const Mat<Scalar> zero = Mat<Scalar>::Zero(H, B);
    for (Eigen::Index t = 0; t < S; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        for (Eigen::Index b = 0; b < B; ++b)
            tape.inputs[ts].col(b) = net.embedding.row(tokens(t, b)).transpose();
        const Mat<Scalar>* in = &tape.inputs[ts];
        for (std::size_t l = 0; l < L; ++l) {
            const Mat<Scalar>& h_prev = t > 0 ? tape.hiddens[l][ts - 1] : zero;
            const Mat<Scalar>& c_prev = t > 0 ? tape.cells[l][ts - 1] : zero;
            lstm_cell<Scalar>(net.layers[l], *in, h_prev, c_prev, tape.gates[l][ts],
                              tape.cells[l][ts], tape.tanh_cells[l][ts], tape.hiddens[l][ts]);
            in = &tape.hiddens[l][ts];
        }
    }
}

/// Accumulates parameter gradients into `grad` given dLoss/dh for the top
/// layer at every step (`d_top[t]`, H x batch).
template <typename Scalar>
void backbone_backward(const Backbone<Scalar>& net, const Eigen::MatrixXi& tokens,
                       const BackboneTape<Scalar>& tape, const std::vector<Mat<Scalar>>& d_top,
                       Backbone<Scalar>& grad) {
    const auto S = tape.steps, B = tape.batch;
    const auto L = net.layers.size();
    const Eigen::Index H = net.hidden();
    const Mat<Scalar> zero = Mat<Scalar>::Zero(H, B);

    std::vector<Mat<Scalar>> dh_next(L, zero), dc_next(L, zero);
    Mat<Scalar> dh, dc, dz(4 * H, B), d_in;

    for (Eigen::Index t = S - 1; t >= 0; --t) {
        const auto ts = static_cast<std::size_t>(t);
        for (std::size_t l = L; l-- > 0;) {
            const auto& p = net.layers[l];
            auto& g = grad.layers[l];
            const Mat<Scalar>& gates = tape.gates[l][ts];
            const Mat<Scalar>& tanh_c = tape.tanh_cells[l][ts];
            const Mat<Scalar>& c_prev = t > 0 ? tape.cells[l][ts - 1] : zero;
            const Mat<Scalar>& h_prev = t > 0 ? tape.hiddens[l][ts - 1] : zero;
            const Mat<Scalar>& in = l == 0 ? tape.inputs[ts] : tape.hiddens[l - 1][ts];

            dh = dh_next[l];
            if (l + 1 == L)
                dh += d_top[ts];
            else
                dh += d_in;  // from layer l+1 at this step

            const auto i = gates.topRows(H).array();
            const auto f = gates.middleRows(H, H).array();
            const auto o = gates.middleRows(2 * H, H).array();
            const auto gg = gates.bottomRows(H).array();

            dc = (dh.array() * o * (Scalar(1) - tanh_c.array().square())).matrix() + dc_next[l];
            dz.topRows(H) = (dc.array() * gg * i * (Scalar(1) - i)).matrix();
            dz.middleRows(H, H) = (dc.array() * c_prev.array() * f * (Scalar(1) - f)).matrix();
            dz.middleRows(2 * H, H) = (dh.array() * tanh_c.array() * o * (Scalar(1) - o)).matrix();
            dz.bottomRows(H) = (dc.array() * i * (Scalar(1) - gg.square())).matrix();
            dc_next[l] = (dc.array() * f).matrix();

            g.w_x.noalias() += dz * in.transpose();
            g.w_h.noalias() += dz * h_prev.transpose();
            g.b.col(0) += dz.rowwise().sum();
            dh_next[l].noalias() = p.w_h.transpose() * dz;
            d_in.noalias() = p.w_x.transpose() * dz;
        }
        for (Eigen::Index b = 0; b < B; ++b)
            grad.embedding.row(tokens(t, b)) += d_in.col(b).transpose();
    }
}

// ---------------------------------------------------------------------------
// Next-token model

template <typename Scalar>
struct SequenceModelT {
    ModelConfig config;
    Role role = Role::N;
    Backbone<Scalar> backbone;
    Mat<Scalar> out_w;  // H x m_vocab
    Mat<Scalar> out_b;  // m_vocab x 1

    static SequenceModelT zeros(const ModelConfig& cfg, Role role = Role::N) {
        cfg.validate();
        SequenceModelT m;
        m.config = cfg;
        m.role = role;
        m.backbone = Backbone<Scalar>::zeros(cfg);
        m.out_w = Mat<Scalar>::Zero(cfg.hidden_dim, cfg.m_vocab);
        m.out_b = Mat<Scalar>::Zero(cfg.m_vocab, 1);
        return m;
    }

    static SequenceModelT random(const ModelConfig& cfg, Role role = Role::N) {
        auto m = zeros(cfg, role);
        Rng rng(cfg.seed);
        init_backbone(m.backbone, rng);
        init_uniform(m.out_w, cfg.hidden_dim, rng);
        init_uniform(m.out_b, cfg.hidden_dim, rng);
        return m;
    }

    SequenceModelT zeros_like() const { return zeros(config, role); }

    template <typename Self, typename F>
    static void for_each(Self& self, F&& f) {
        Backbone<Scalar>::for_each(self.backbone, f);
        f(std::string("out.w"), self.out_w);
        f(std::string("out.b"), self.out_b);
    }
};

/// Token matrices for a next-token batch: inputs start with the start symbol
/// (id 0) and targets are the observed tokens.
struct LmBatch {
    Eigen::MatrixXi inputs, targets;
    std::vector<int> lengths;
    long valid_steps = 0;
};

inline LmBatch make_lm_batch(std::span<const TokenizedSequence* const> seqs, int vocab) {
    LmBatch batch;
    int steps = 0;
    for (const auto* s : seqs) steps = std::max(steps, s->true_len);
    const auto B = static_cast<Eigen::Index>(seqs.size());
    batch.inputs = Eigen::MatrixXi::Zero(steps, B);
    batch.targets = Eigen::MatrixXi::Zero(steps, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& s = *seqs[static_cast<std::size_t>(b)];
        if (s.true_len < 1 || s.true_len > static_cast<int>(s.tokens.size()))
            throw DomainError("sequence true_len out of range");
        for (int t = 0; t < s.true_len; ++t) {
            const TokenId tok = s.tokens[static_cast<std::size_t>(t)];
            if (tok < 0 || tok >= vocab) throw DomainError("token id out of vocabulary range");
            batch.targets(t, b) = tok;
            if (t + 1 < steps) batch.inputs(t + 1, b) = tok;
        }
        batch.lengths.push_back(s.true_len);
        batch.valid_steps += s.true_len;
    }
    return batch;
}

/// Column-wise log-softmax.
template <typename Scalar>
Mat<Scalar> log_softmax(const Mat<Scalar>& logits) {
    Mat<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        const Scalar mx = logits.col(b).maxCoeff();
        const Scalar lse = mx + std::log((logits.col(b).array() - mx).exp().sum());
        out.col(b) = logits.col(b).array() - lse;
    }
    return out;
}

/// Mean next-token cross-entropy over non-padding steps. When `grad` is
/// non-null its blocks receive the gradient of that mean (accumulated).
template <typename Scalar>
Scalar lm_loss(const SequenceModelT<Scalar>& model, const LmBatch& batch,
               SequenceModelT<Scalar>* grad) {
    const auto S = batch.inputs.rows(), B = batch.inputs.cols();
    const Scalar norm = Scalar(1) / static_cast<Scalar>(batch.valid_steps);
    BackboneTape<Scalar> tape;
    backbone_forward(model.backbone, batch.inputs, tape);
    const auto top = model.backbone.layers.size() - 1;

    std::vector<Mat<Scalar>> d_top;
    if (grad) d_top.resize(static_cast<std::size_t>(S));
    Scalar loss = 0;
    Mat<Scalar> logits, logp, dlogits;
    for (Eigen::Index t = 0; t < S; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        const Mat<Scalar>& h = tape.hiddens[top][ts];
        logits.noalias() = model.out_w.transpose() * h;
        logits.colwise() += model.out_b.col(0);
        logp = log_softmax(logits);
        if (grad) dlogits = logp.array().exp();
        for (Eigen::Index b = 0; b < B; ++b) {
            const bool valid = t < batch.lengths[static_cast<std::size_t>(b)];
            if (valid) loss -= logp(batch.targets(t, b), b);
            if (grad) {
                if (valid) {
                    dlogits(batch.targets(t, b), b) -= Scalar(1);
                    dlogits.col(b) *= norm;
                } else {
                    dlogits.col(b).setZero();
                }
            }
        }
        if (grad) {
            grad->out_w.noalias() += h * dlogits.transpose();
            grad->out_b.col(0) += dlogits.rowwise().sum();
            d_top[ts].noalias() = model.out_w * dlogits;
        }
    }
    if (grad) backbone_backward(model.backbone, batch.inputs, tape, d_top, grad->backbone);
    return loss * norm;
}

/// Per-step next-token distributions (m_vocab x true_len) for one sequence.
template <typename Scalar>
Mat<Scalar> forward_sequence(const SequenceModelT<Scalar>& model, const TokenizedSequence& seq) {
    const TokenizedSequence* one[] = {&seq};
    const LmBatch batch = make_lm_batch(one, model.config.m_vocab);
    BackboneState<Scalar> state;
    state.reset(model.backbone, 1);
    Mat<Scalar> out(model.config.m_vocab, seq.true_len), logits;
    for (int t = 0; t < seq.true_len; ++t) {
        const TokenId in = batch.inputs(t, 0);
        const auto& h = state.step(model.backbone, std::span<const TokenId>(&in, 1));
        logits.noalias() = model.out_w.transpose() * h;
        logits.colwise() += model.out_b.col(0);
        out.col(t) = log_softmax(logits).array().exp().matrix();
    }
    return out;
}

/// Natural-log sequence probabilities (sum of per-step log-probabilities of the
/// observed tokens, each floored at `floor`), evaluated in batches.
template <typename Scalar>
std::vector<Scalar> sequence_log_probs(const SequenceModelT<Scalar>& model,
                                       std::span<const TokenizedSequence> seqs,
                                       Scalar floor = Scalar(1e-12), std::size_t batch_size = 256) {
    std::vector<Scalar> out(seqs.size(), Scalar(0));
    const Scalar log_floor = std::log(floor);
    BackboneState<Scalar> state;
    Mat<Scalar> logits, logp;
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, seqs.size() - start);
        std::vector<const TokenizedSequence*> ptrs;
        for (std::size_t k = 0; k < n; ++k) ptrs.push_back(&seqs[start + k]);
        const LmBatch batch = make_lm_batch(ptrs, model.config.m_vocab);
        state.reset(model.backbone, static_cast<Eigen::Index>(n));
        std::vector<TokenId> col(n);
        for (Eigen::Index t = 0; t < batch.inputs.rows(); ++t) {
            for (std::size_t b = 0; b < n; ++b) col[b] = batch.inputs(t, static_cast<Eigen::Index>(b));
            const auto& h = state.step(model.backbone, col);
            logits.noalias() = model.out_w.transpose() * h;
            logits.colwise() += model.out_b.col(0);
            logp = log_softmax(logits);
            for (std::size_t b = 0; b < n; ++b) {
                const auto bi = static_cast<Eigen::Index>(b);
                if (t < batch.lengths[b])
                    out[start + b] += std::max(logp(batch.targets(t, bi), bi), log_floor);
            }
        }
    }
    return out;
}

template <typename Scalar>
Scalar sequence_log_prob(const SequenceModelT<Scalar>& model, const TokenizedSequence& seq,
                         Scalar floor = Scalar(1e-12)) {
    return sequence_log_probs(model, std::span<const TokenizedSequence>(&seq, 1), floor)[0];
}

// ---------------------------------------------------------------------------
// Binary classifier: same backbone, final hidden state -> one logit.

template <typename Scalar>
struct BinaryClassifierT {
    ModelConfig config;
    Backbone<Scalar> backbone;
    Mat<Scalar> cls_w;  // H x 1
    Mat<Scalar> cls_b;  // 1 x 1

    static BinaryClassifierT zeros(const ModelConfig& cfg) {
        cfg.validate();
        BinaryClassifierT m;
        m.config = cfg;
        m.backbone = Backbone<Scalar>::zeros(cfg);
        m.cls_w = Mat<Scalar>::Zero(cfg.hidden_dim, 1);
        m.cls_b = Mat<Scalar>::Zero(1, 1);
        return m;
    }

    static BinaryClassifierT random(const ModelConfig& cfg) {
        auto m = zeros(cfg);
        Rng rng(cfg.seed);
        init_backbone(m.backbone, rng);
        init_uniform(m.cls_w, cfg.hidden_dim, rng);
        init_uniform(m.cls_b, cfg.hidden_dim, rng);
        return m;
    }

    BinaryClassifierT zeros_like() const { return zeros(config); }

    template <typename Self, typename F>
    static void for_each(Self& self, F&& f) {
        Backbone<Scalar>::for_each(self.backbone, f);
        f(std::string("cls.w"), self.cls_w);
        f(std::string("cls.b"), self.cls_b);
    }
};

struct ClsBatch {
    Eigen::MatrixXi inputs;  // tokens fed directly, no start symbol
    std::vector<int> lengths;
};

inline ClsBatch make_cls_batch(std::span<const TokenizedSequence* const> seqs, int vocab) {
    ClsBatch batch;
    int steps = 0;
    for (const auto* s : seqs) steps = std::max(steps, s->true_len);
    batch.inputs = Eigen::MatrixXi::Zero(steps, static_cast<Eigen::Index>(seqs.size()));
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const auto& s = *seqs[b];
        if (s.true_len < 1 || s.true_len > static_cast<int>(s.tokens.size()))
            throw DomainError("sequence true_len out of range");
        for (int t = 0; t < s.true_len; ++t) {
            const TokenId tok = s.tokens[static_cast<std::size_t>(t)];
            if (tok < 0 || tok >= vocab) throw DomainError("token id out of vocabulary range");
            batch.inputs(t, static_cast<Eigen::Index>(b)) = tok;
        }
        batch.lengths.push_back(s.true_len);
    }
    return batch;
}

/// Mean binary cross-entropy against `targets` (1 = attack), accumulating the
/// gradient into `grad` when non-null.
template <typename Scalar>
Scalar bce_loss(const BinaryClassifierT<Scalar>& model, const ClsBatch& batch,
                std::span<const Scalar> targets, BinaryClassifierT<Scalar>* grad) {
    const auto S = batch.inputs.rows(), B = batch.inputs.cols();
    BackboneTape<Scalar> tape;
    backbone_forward(model.backbone, batch.inputs, tape);
    const auto top = model.backbone.layers.size() - 1;
    const Eigen::Index H = model.backbone.hidden();

    std::vector<Mat<Scalar>> d_top;
    if (grad) d_top.assign(static_cast<std::size_t>(S), Mat<Scalar>::Zero(H, B));
    Scalar loss = 0;
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto last = static_cast<std::size_t>(batch.lengths[static_cast<std::size_t>(b)] - 1);
        const auto h = tape.hiddens[top][last].col(b);
        const Scalar z = model.cls_w.col(0).dot(h) + model.cls_b(0, 0);
        const Scalar y = targets[static_cast<std::size_t>(b)];
        // log(1 + exp(-|z|)) form of the logistic loss
        const Scalar softplus_neg = std::log1p(std::exp(-std::abs(z)));
        loss += (z > 0 ? (Scalar(1) - y) * z : -y * z) + softplus_neg;
        if (grad) {
            const Scalar dz = (sigmoid(z) - y) * inv_b;
            grad->cls_w.col(0) += dz * h;
            grad->cls_b(0, 0) += dz;
            d_top[last].col(b) += dz * model.cls_w.col(0);
        }
    }
    if (grad) backbone_backward(model.backbone, batch.inputs, tape, d_top, grad->backbone);
    return loss * inv_b;
}

/// Predicted attack probability per sequence.
template <typename Scalar>
std::vector<Scalar> predict_proba(const BinaryClassifierT<Scalar>& model,
                                  std::span<const TokenizedSequence> seqs,
                                  std::size_t batch_size = 256) {
    std::vector<Scalar> out(seqs.size());
    BackboneState<Scalar> state;
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, seqs.size() - start);
        std::vector<const TokenizedSequence*> ptrs;
        for (std::size_t k = 0; k < n; ++k) ptrs.push_back(&seqs[start + k]);
        const ClsBatch batch = make_cls_batch(ptrs, model.config.m_vocab);
        state.reset(model.backbone, static_cast<Eigen::Index>(n));
        std::vector<TokenId> col(n);
        for (Eigen::Index t = 0; t < batch.inputs.rows(); ++t) {
            for (std::size_t b = 0; b < n; ++b) col[b] = batch.inputs(t, static_cast<Eigen::Index>(b));
            const auto& h = state.step(model.backbone, col);
            for (std::size_t b = 0; b < n; ++b) {
                if (t == batch.lengths[b] - 1) {
                    const Scalar z =
                        model.cls_w.col(0).dot(h.col(static_cast<Eigen::Index>(b))) + model.cls_b(0, 0);
                    out[start + b] = sigmoid(z);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename Model>
struct OptimizerState {
    Model m, v;  // first/second moments, same shapes as the parameters
    long step = 0;
    double beta1 = 0.9, beta2 = 0.999, floor = 1e-8;

    static OptimizerState for_model(const Model& model) {
        return {model.zeros_like(), model.zeros_like(), 0};
    }
};

template <typename Model>
auto param_blocks(Model& model) {
    using Matrix = std::remove_reference_t<decltype(model.backbone.embedding)>;
    std::vector<std::pair<std::string, Matrix*>> blocks;
    Model::for_each(model, [&](const std::string& name, Matrix& m) { blocks.emplace_back(name, &m); });
    return blocks;
}

template <typename Model>
auto param_blocks(const Model& model) {
    using Matrix = std::remove_cvref_t<decltype(model.backbone.embedding)>;
    std::vector<std::pair<std::string, const Matrix*>> blocks;
    Model::for_each(model,
                    [&](const std::string& name, const Matrix& m) { blocks.emplace_back(name, &m); });
    return blocks;
}

/// Same parameters at another scalar precision.
template <typename To, typename From>
SequenceModelT<To> cast_model(const SequenceModelT<From>& model) {
    auto out = SequenceModelT<To>::zeros(model.config, model.role);
    auto dst = param_blocks(out);
    const auto src = param_blocks(model);
    for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].second = src[k].second->template cast<To>();
    return out;
}

template <typename To, typename From>
BinaryClassifierT<To> cast_model(const BinaryClassifierT<From>& model) {
    auto out = BinaryClassifierT<To>::zeros(model.config);
    auto dst = param_blocks(out);
    const auto src = param_blocks(model);
    for (std::size_t k = 0; k < dst.size(); ++k) *dst[k].second = src[k].second->template cast<To>();
    return out;
}

/// Throws NumericError naming the first block containing a non-finite value.
template <typename Model>
void check_finite(const Model& model, const std::string& what) {
    for (const auto& [name, m] : param_blocks(model))
        if (!m->allFinite()) throw NumericError("non-finite " + what + " in block " + name);
}

/// Global-norm clipping followed by an Adam or SGD update.
template <typename Model>
void apply_update(Model& model, Model& grad, OptimizerState<Model>& opt) {
    using Scalar = typename std::remove_cvref_t<decltype(model.backbone.embedding)>::Scalar;
    const ModelConfig& cfg = model.config;
    auto params = param_blocks(model);
    auto grads = param_blocks(grad);

    if (cfg.clip_norm > 0) {
        double sq = 0;
        for (const auto& g : grads) sq += static_cast<double>(g.second->squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm)
            for (auto& g : grads) *g.second *= static_cast<Scalar>(cfg.clip_norm / norm);
    }

    const auto lr = static_cast<Scalar>(cfg.learning_rate);
    if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t k = 0; k < params.size(); ++k) *params[k].second -= lr * *grads[k].second;
        return;
    }
    auto ms = param_blocks(opt.m);
    auto vs = param_blocks(opt.v);
    ++opt.step;
    const auto b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, static_cast<double>(opt.step)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, static_cast<double>(opt.step)));
    const auto eps = static_cast<Scalar>(opt.floor);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k].second;
        const auto& g = *grads[k].second;
        auto& m = *ms[k].second;
        auto& v = *vs[k].second;
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
}

}  // namespace ndf

#endif
