#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "palm/eval/rollout.hpp"

using namespace palm;
using namespace palm::eval;
namespace fs = std::filesystem;

namespace {

model::ModelConfig rollout_model_cfg(int k = 2) {
    model::ModelConfig mc;
    mc.scene.table_size = 32;
    mc.scene.chain_length = k;
    mc.scene.num_objects = k;
    mc.scene.num_containers = k;
    mc.scene.seed = 9;
    mc.encoder.vision_width = 16;
    mc.encoder.vision_layers = 1;
    mc.encoder.vision_heads = 2;
    mc.encoder.resampled_tokens = 2;
    mc.encoder.resampler_layers = 1;
    mc.encoder.resampler_heads = 2;
    mc.encoder.state_width = 8;
    mc.encoder.d_model = 16;
    mc.backbone.d_model = 16;
    mc.backbone.layers = 1;
    mc.backbone.heads = 2;
    mc.heads.vae_latent = 4;
    mc.heads.layers = 1;
    mc.heads.heads = 2;
    mc.diffusion.d_model = 16;
    mc.diffusion.layers = 1;
    mc.diffusion.heads = 2;
    mc.supervision.grid_side = 8;
    mc.finalize();
    return mc;
}

} // namespace

TEST_CASE("progress controller: first crossing, saturation, latching") {
    {
        ProgressController c(0.9, 3);
        CHECK_FALSE(c.update(0.5, 1));
        CHECK_FALSE(c.update(0.8, 2));
        CHECK(c.update(0.91, 3));
        CHECK(c.stage() == 1);
        CHECK(c.switch_log().size() == 1);
        CHECK(c.switch_log()[0].step == 3);
    }
    {
        // phi = 1.0 and a signal that never saturates: no switch.
        ProgressController c(1.0, 3);
        for (int t = 0; t < 50; ++t) CHECK_FALSE(c.update(0.99, t));
        CHECK(c.stage() == 0);
    }
    {
        // Oscillation around phi: exactly one switch at the first crossing.
        ProgressController c(0.9, 3);
        CHECK(c.update(0.91, 1));
        CHECK_FALSE(c.update(0.85, 2));
        CHECK_FALSE(c.update(0.92, 3));
        CHECK(c.stage() == 1);
        CHECK(c.switch_log().size() == 1);

        // After a genuine reset of the signal the controller re-arms.
        CHECK_FALSE(c.update(0.1, 4));
        CHECK(c.update(0.95, 5));
        CHECK(c.stage() == 2);
    }
    {
        // Never advances past the last stage.
        ProgressController c(0.5, 1);
        CHECK(c.update(0.9, 1));
        c.update(0.0, 2);
        CHECK_FALSE(c.update(0.9, 3));
        CHECK(c.stage() == 1);
    }
    CHECK_THROWS_AS(ProgressController(0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(ProgressController(1.5, 1), std::invalid_argument);
}

TEST_CASE("success-in-a-row metrics: identities and published-table arithmetic") {
    // Table rows reproduce their Avg. Len. by summation.
    auto palm_row = report_from_rates({0.969, 0.938, 0.893, 0.859, 0.820});
    CHECK(std::abs(palm_row.avg_len - 4.48) <= 0.005);
    auto phi70_row = report_from_rates({0.934, 0.863, 0.784, 0.719, 0.655});
    CHECK(std::abs(phi70_row.avg_len - 3.96) <= 0.005);

    // Counts route: [5,3,0,4] -> mean 3.0, and sum-of-SR agrees exactly.
    std::vector<EpisodeResult> results;
    for (int c : {5, 3, 0, 4}) {
        EpisodeResult e;
        e.completed = c;
        e.chain_length = 5;
        results.push_back(e);
    }
    auto rep = success_in_row_metrics(results, 5);
    CHECK(rep.avg_len == doctest::Approx(3.0).epsilon(1e-12));

    // Random result sets: Avg. Len. == mean completed == sum SR(k), SR
    // nonincreasing.
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 1 + rng.uniform_index(6);
        const int n = 1 + rng.uniform_index(50);
        std::vector<EpisodeResult> rs;
        double mean = 0;
        for (int i = 0; i < n; ++i) {
            EpisodeResult e;
            e.completed = rng.uniform_index(k + 1);
            e.chain_length = k;
            mean += e.completed;
            rs.push_back(e);
        }
        mean /= n;
        auto r = success_in_row_metrics(rs, k);
        CHECK(std::abs(r.avg_len - mean) <= 1e-12);
        for (std::size_t d = 1; d < r.success_rates.size(); ++d)
            CHECK(r.success_rates[d] <= r.success_rates[d - 1]);
    }

    CHECK_THROWS_AS(success_in_row_metrics({}, 3), std::invalid_argument);
}

TEST_CASE("controller probe: threshold trade-off matches the ablation shape") {
    const int n = 1000;
    auto p70 = controller_probe(0.7, n, 0.05, 11);
    auto p90 = controller_probe(0.9, n, 0.05, 11);
    auto p100 = controller_probe(1.0, n, 0.05, 11);

    CHECK(p70.premature_rate > p90.premature_rate);
    CHECK(p100.stagnation_rate > p90.stagnation_rate);
    CHECK(p90.stagnation_rate < 0.05);
}

TEST_CASE("report: json round trip, file emission, empty-report atomicity") {
    std::vector<EpisodeResult> results;
    Rng rng(5);
    for (int i = 0; i < 6; ++i) {
        EpisodeResult e;
        e.completed = rng.uniform_index(4);
        e.chain_length = 3;
        e.steps = 30 + i;
        for (int t = 0; t < 30; ++t) e.progress_trace.push_back(rng.uniform());
        e.injection_steps = {5, 12};
        e.switches.push_back({7, 0, 1});
        results.push_back(e);
    }
    auto rep = success_in_row_metrics(results, 3);
    rep.perturbation = "lighting";

    auto back = EvalReport::from_json(rep.to_json());
    CHECK(back.avg_len == rep.avg_len);
    CHECK(back.success_rates == rep.success_rates);
    CHECK(back.completed_counts == rep.completed_counts);
    CHECK(back.episodes.size() == rep.episodes.size());
    CHECK(back.episodes[0].injection_steps == rep.episodes[0].injection_steps);
    CHECK(back.perturbation == "lighting");

    const fs::path root = fs::temp_directory_path() / "palm_test_report";
    fs::remove_all(root);
    emit_report(rep, root.string());
    for (const char* f : {"report.json", "report.md", "success_bars.svg", "progress_traces.svg"}) {
        CHECK(fs::exists(root / f));
        CHECK(fs::file_size(root / f) > 0);
    }
    // Round trip through the emitted file.
    std::ifstream in(root / "report.json");
    auto j = nlohmann::json::parse(in);
    CHECK(EvalReport::from_json(j).avg_len == rep.avg_len);

    fs::remove_all(root);
    EvalReport empty;
    CHECK_THROWS_AS(emit_report(empty, root.string()), std::invalid_argument);
    CHECK_FALSE(fs::exists(root / "report.json"));
    fs::remove_all(root);
}

TEST_CASE("rollout: untrained policy runs closed loop with consistent bookkeeping") {
    auto mc = rollout_model_cfg();
    model::PalmModel<float> model(mc, 31);
    env::Simulator sim(mc.scene);

    RolloutConfig rc;
    rc.max_steps = 24;
    rc.sample_steps = 4;
    auto r1 = rollout(model, sim, 100, rc);
    CHECK(r1.steps <= 24);
    CHECK(r1.completed >= 0);
    CHECK(r1.progress_trace.size() == static_cast<std::size_t>(r1.steps));

    // Deterministic: identical seeds give identical traces.
    auto r2 = rollout(model, sim, 100, rc);
    CHECK(r1.progress_trace == r2.progress_trace);
    CHECK(r1.completed == r2.completed);

    // Robustness bookkeeping: two injection markers per episode.
    EvalRunConfig ec;
    ec.episodes = 2;
    ec.max_steps = 20;
    ec.sample_steps = 2;
    ec.perturb = "lighting";
    auto rep = evaluate(model, mc.scene, ec);
    CHECK(rep.perturbation == "lighting");
    for (const auto& e : rep.episodes) CHECK(e.injection_steps.size() == 2);
    CHECK(rep.success_rates.size() == 2);

    // Threshold sweep produces one row per phi and rejects invalid values.
    auto rows = threshold_sweep(model, mc.scene, ec, {0.7, 0.9});
    CHECK(rows.size() == 2);
    CHECK_THROWS_AS(threshold_sweep(model, mc.scene, ec, {1.2}), std::invalid_argument);
}
