// Fit sum-softplus and sum-stack-softplus to the circle data and print
// training errors plus the decision geometry at a few probe points.

#include <cstdio>

#include "softplus/softplus.hpp"

using namespace softplus;

static double training_error(const Dataset& d, const FittedModel& m) {
    int wrong = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        wrong += label_from_prob(predict_prob(d.x.row(i).transpose(), m)) != d.y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(wrong) / static_cast<double>(d.size());
}

int main() {
    const Dataset d = data::to_dataset(data::generate_synthetic(data::SyntheticKind::kCircle, 1));

    HyperParams hp;
    hp.n_iter = 1000;
    hp.prune_iters = scaled_prune_schedule(hp.n_iter);

    const auto sum = gibbs::run(d, gibbs::apply_variant(hp, Variant::kSum), Variant::kSum);
    std::printf("sum-softplus: %zu experts, training error %.3f\n", sum.model.experts.size(), training_error(d, sum.model));

    hp.depth = 5;
    const auto ss = gibbs::run(d, hp, Variant::kSumStack);
    std::printf("ss-softplus (T=5): %zu experts, training error %.3f\n", ss.model.experts.size(), training_error(d, ss.model));

    // points on the ring lie outside the polytope bounding the negative region
    for (double radius : {0.0, 1.0, 2.0, 3.0}) {
        Eigen::Vector3d x(1.0, radius, 0.0);
        std::printf("x=(%.1f, 0): P(y=1)=%.3f, violated half-spaces %d\n", radius, predict_prob(x, sum.model),
                    geometry::sum_polytope_violations(x, sum.model));
    }
    return 0;
}
