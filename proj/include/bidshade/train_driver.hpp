#pragma once
// Seeded mini-batch training loop shared by every learned model in the repo:
// deterministic shuffling, mean-over-batch gradients, Adam, and early stopping
// on a held-out slice with best-parameter restore. Single-threaded by design —
// reproducibility over speed at desk scale.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <vector>

#include "bidshade/model.hpp"

namespace bidshade {

struct TrainHyper {
    int epochs = 6;
    int batch = 4096;
    AdamConfig adam;           // paper defaults: lr 1e-2
    double holdout_frac = 0.1;
    int patience = 5;          // early-stop after this many non-improving epochs
    std::uint64_t seed = 1;
};

struct StageReport {
    // holdout_history[0] is the pre-training loss; one entry per epoch after.
    std::vector<double> holdout_history;
    int best_epoch = 0;  // index into holdout_history
    double best_loss = 0.0;
    std::int64_t steps = 0;
};

// sample(i, tape, dlogits): forward the trainable model for sample i on
// `tape`, fill dlogits (dL_i/dlogit per head, unscaled), return L_i. The
// driver scales by 1/|batch| and runs the trainable model's backward.
// holdout_metric (optional): per-sample value to minimize for early stopping;
// defaults to the sample loss with gradients ignored.
class TrainDriver {
public:
    TrainDriver(BaseModel& model, TrainHyper hyper) : model_(model), hyper_(hyper) {}

    StageReport run(std::int64_t n,
                    const std::function<double(std::int64_t, Tape&, double*)>& sample,
                    const std::function<double(std::int64_t, Tape&)>& holdout_metric = nullptr) {
        if (n < 1) throw TrainError("training: empty sample set");
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        shuffle(order, Rng(mix_seed(hyper_.seed, 0x5b1f)));

        std::int64_t n_hold = static_cast<std::int64_t>(hyper_.holdout_frac * static_cast<double>(n));
        n_hold = std::min(n_hold, n - 1);
        std::vector<std::int64_t> holdout(order.begin(), order.begin() + n_hold);
        std::vector<std::int64_t> train(order.begin() + n_hold, order.end());
        const std::vector<std::int64_t>& eval_set = holdout.empty() ? train : holdout;

        const int heads = model_.config().heads;
        GradBuffer grads;
        grads.init_like(model_.tensors());
        AdamState adam;
        Tape tape;
        std::vector<double> dlogits(static_cast<std::size_t>(heads));
        std::vector<double> dscaled(static_cast<std::size_t>(heads));

        auto eval_loss = [&]() {
            double total = 0.0;
            for (std::int64_t i : eval_set) {
                if (holdout_metric) {
                    total += holdout_metric(i, tape);
                } else {
                    total += sample(i, tape, dlogits.data());
                }
            }
            return total / static_cast<double>(eval_set.size());
        };

        StageReport report;
        report.holdout_history.push_back(eval_loss());
        report.best_loss = report.holdout_history[0];
        report.best_epoch = 0;
        std::vector<std::vector<double>> best = snapshot();

        int stale = 0;
        for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
            shuffle(train, Rng(mix_seed(hyper_.seed, 0xe90c, static_cast<std::uint64_t>(epoch))));
            for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(hyper_.batch)) {
                const std::size_t stop = std::min(train.size(), start + static_cast<std::size_t>(hyper_.batch));
                const double scale = 1.0 / static_cast<double>(stop - start);
                grads.zero();
                for (std::size_t k = start; k < stop; ++k) {
                    sample(train[k], tape, dlogits.data());
                    for (int h = 0; h < heads; ++h)
                        dscaled[static_cast<std::size_t>(h)] = dlogits[static_cast<std::size_t>(h)] * scale;
                    model_.backward(tape, dscaled.data(), &grads, nullptr);
                }
                adam_step(model_.tensors(), grads, adam, hyper_.adam);
                ++report.steps;
            }
            const double loss = eval_loss();
            report.holdout_history.push_back(loss);
            if (loss < report.best_loss - 1e-12) {
                report.best_loss = loss;
                report.best_epoch = epoch + 1;
                best = snapshot();
                stale = 0;
            } else if (++stale >= hyper_.patience) {
                break;
            }
        }
        restore(best);
        return report;
    }

private:
    void shuffle(std::vector<std::int64_t>& v, Rng rng) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    }

    std::vector<std::vector<double>> snapshot() {
        std::vector<std::vector<double>> out;
        for (const auto& t : model_.tensors())
            if (t.trainable) out.push_back(*t.data);
        return out;
    }

    void restore(const std::vector<std::vector<double>>& snap) {
        std::size_t k = 0;
        for (auto& t : model_.tensors())
            if (t.trainable) *t.data = snap[k++];
    }

    BaseModel& model_;
    TrainHyper hyper_;
};

}  // namespace bidshade
