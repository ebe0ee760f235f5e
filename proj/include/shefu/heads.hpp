#pragma once

#include "shefu/embedder.hpp"
#include "shefu/tensor.hpp"

namespace shefu {

// One classification head: flattened encoder output -> 2 logits.
template <typename S>
struct HeadParamsT {
    ParamT<S> w;  // (s_final * d_model) x 2
    ParamT<S> b;  // 2

    void collect(std::vector<ParamT<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

// Mode-dependent loss weights. The inactive mode is masked to zero, which is
// what makes the multi-task training single-model.
struct TaskWeights {
    double lambda_targ = 1.0;
    double lambda_dest = 1.0;

    static TaskWeights for_mode(Mode m, double base_targ = 1.0, double base_dest = 1.0) {
        if (m == Mode::target) return {base_targ, 0.0};
        return {0.0, base_dest};
    }
};

struct Prediction {
    double p_targ = 0, p_dest = 0;
    bool yhat_targ = false, yhat_dest = false;
    bool yhat() const { return yhat_targ && yhat_dest; }
};

// true iff p >= 0.5; the tie at exactly 0.5 goes positive.
inline bool binarize(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("binarize: probability outside [0,1]");
    return p >= 0.5;
}

inline bool combine(bool yhat_targ, bool yhat_dest) { return yhat_targ && yhat_dest; }

// Two-class probability vector from a head over the flattened encoder output.
// Index 1 is the positive class.
template <typename S>
VarT<S> predict_dist(TapeT<S>& tape, VarT<S> h_out, const HeadParamsT<S>& head) {
    size_t flat = h_out.numel();
    if (head.w.value.shape[0] != flat)
        throw ContractError("predict: head expects input width " +
                            std::to_string(head.w.value.shape[0]) + ", got " + std::to_string(flat));
    VarT<S> row = tape.reshape(h_out, {1, flat});
    VarT<S> logits = tape.add_rowvec(tape.matmul(row, tape.param(head.w)), tape.param(head.b));
    return tape.softmax_rows(logits);
}

// Cross entropy of a boolean label against a 2-class distribution, with the
// picked probability clamped away from 0 and 1.
template <typename S>
VarT<S> cross_entropy(TapeT<S>& tape, VarT<S> dist, bool label) {
    if (dist.numel() != 2) throw ContractError("cross_entropy: expected a 2-class distribution");
    VarT<S> p = tape.select(dist, label ? 1 : 0);
    p = tape.clamp(p, S(1e-7), S(1.0 - 1e-7));
    return tape.scale(tape.log(p), S(-1));
}

// lambda_targ * CE(y_targ, p_targ) + lambda_dest * CE(y_dest, p_dest).
// A side with weight zero may pass a null distribution; it contributes
// nothing and its head is never evaluated.
template <typename S>
VarT<S> mode_loss(TapeT<S>& tape, bool y_targ, const VarT<S>* p_targ_dist, bool y_dest,
                  const VarT<S>* p_dest_dist, const TaskWeights& w) {
    if (w.lambda_targ < 0 || w.lambda_dest < 0)
        throw ContractError("loss: task weights must be nonnegative");
    VarT<S> total = tape.leaf(TensorT<S>::zeros({1}));
    if (w.lambda_targ != 0.0) {
        if (!p_targ_dist) throw ContractError("loss: lambda_targ != 0 but no target distribution");
        total = tape.add(total, tape.scale(cross_entropy(tape, *p_targ_dist, y_targ),
                                           static_cast<S>(w.lambda_targ)));
    }
    if (w.lambda_dest != 0.0) {
        if (!p_dest_dist) throw ContractError("loss: lambda_dest != 0 but no destination distribution");
        total = tape.add(total, tape.scale(cross_entropy(tape, *p_dest_dist, y_dest),
                                           static_cast<S>(w.lambda_dest)));
    }
    return total;
}

}  // namespace shefu
