#include "posemine/losses.hpp"

namespace posemine {

namespace {

// {K, 2} mask carrying weight[k] on rows of the selected index range and zero
// elsewhere, so one masked L1 covers both loss variants.
Tensor range_mask(const KeypointSet& gt, int k_total, int begin, int end) {
    Tensor mask = Tensor::zeros({k_total, 2});
    auto& v = mask.mutable_values();
    for (int k = begin; k < end; ++k) {
        v[static_cast<std::size_t>(2 * k + 0)] = gt.weight[static_cast<std::size_t>(k)];
        v[static_cast<std::size_t>(2 * k + 1)] = gt.weight[static_cast<std::size_t>(k)];
    }
    return mask;
}

Tensor masked_l1(const ForwardTrace& trace, const KeypointSet& gt, int begin, int end,
                 std::vector<double>* per_layer) {
    const int layers = trace.layer_count();
    if (layers == 0) throw ContractError("loss: empty trace");
    const int k_total = trace.p_q.front().dim(0);
    if (gt.size() != k_total)
        throw ContractError("loss: ground truth sized " + std::to_string(gt.size()) +
                            ", predictions sized " + std::to_string(k_total));

    const Tensor target = keypoints_tensor(gt);
    const Tensor mask = range_mask(gt, k_total, begin, end);
    Tensor acc;
    for (int l = 0; l < layers; ++l) {
        const Tensor term = sum_all(mul(mask, abs_val(sub(trace.p_q[static_cast<std::size_t>(l)],
                                                          target))));
        if (per_layer) per_layer->push_back(term.scalar_value());
        acc = l == 0 ? term : add(acc, term);
    }
    return smul(acc, 1.0 / static_cast<double>(layers));
}

}  // namespace

Tensor loss_raw(const ForwardTrace& trace, const KeypointSet& gt) {
    return masked_l1(trace, gt, 0, gt.raw_count, nullptr);
}

Tensor loss_mixup(const ForwardTrace& trace, const KeypointSet& gt) {
    return masked_l1(trace, gt, gt.raw_count, gt.size(), nullptr);
}

LossBreakdown loss_full(const ForwardTrace& trace, const KeypointSet& gt, double beta) {
    if (beta < 0.0) throw ContractError("loss_full: beta must be non-negative");
    LossBreakdown out;
    out.raw = masked_l1(trace, gt, 0, gt.raw_count, &out.per_layer_raw);
    out.mixup = masked_l1(trace, gt, gt.raw_count, gt.size(), &out.per_layer_mixup);
    out.full = add(out.raw, smul(out.mixup, beta));
    return out;
}

}  // namespace posemine
