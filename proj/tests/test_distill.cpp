#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "switchkd/distill.hpp"
#include "switchkd/rng.hpp"
#include "test_util.hpp"

using namespace switchkd;

namespace {

ModelConfig tiny_config(int lm_dim = 16, int layers = 1) {
    ModelConfig c;
    c.vision_dim = 8;
    c.n_visual_tokens = 4;
    c.lm_dim = lm_dim;
    c.lm_layers = layers;
    c.lm_heads = 2;
    c.vocab_size = 64;
    c.max_seq_len = 12;
    return c;
}

DatasetSpec tiny_spec(uint64_t seed = 9001, double noise = 0.0) {
    DatasetSpec s;
    s.n_train = 96;
    s.n_val = 24;
    s.seed = seed;
    s.noise_level = noise;
    return s;
}

DistillConfig fast_cfg() {
    DistillConfig c;
    c.pt = StageHyper{1e-3, 16, 1};
    c.ft = StageHyper{1e-3, 16, 1};
    return c;
}

} // namespace

TEST_CASE("ce_loss: uniform logits give ln(vocab), confident logits go to zero") {
    Tape t;
    const int T = 3, N = 64;
    std::vector<double> uniform(static_cast<size_t>(T) * N, 0.25);
    std::vector<int> targets{5, 9, 11};
    std::vector<bool> mask{false, true, true};
    DiffArray l = ce_loss(t.constant({T, N}, uniform), targets, mask, 1.0);
    CHECK(l.value() == doctest::Approx(4.1588830833596715).epsilon(1e-12));

    std::vector<double> confident(static_cast<size_t>(T) * N, 0.0);
    for (int i = 0; i < T; ++i) confident[i * N + targets[i]] = 20.0;
    DiffArray l2 = ce_loss(t.constant({T, N}, confident), targets, mask, 1.0);
    CHECK(l2.value() < 1e-6);

    CHECK_THROWS_AS(ce_loss(t.constant({T, N}, uniform), targets, {false, false, false}, 1.0),
                    ContractError);
    CHECK_THROWS_AS(ce_loss(t.constant({T, N}, uniform), {5, 64, 0}, mask, 1.0), BoundsError);
}

TEST_CASE("ce_loss gradient matches finite differences") {
    Rng rng(515);
    for (int trial = 0; trial < 10; ++trial) {
        const int T = 2 + rng.bounded_int(3), N = 8 + rng.bounded_int(16);
        std::vector<int> targets(T);
        for (auto& x : targets) x = rng.bounded_int(N);
        std::vector<bool> mask(T, true);
        testutil::GradCheck gc;
        gc.shapes = {{T, N}};
        gc.inputs = {testutil::random_vec(rng, static_cast<size_t>(T) * N)};
        gc.build = [targets, mask](Tape&, const std::vector<DiffArray>& l) {
            return ce_loss(l[0], targets, mask, 1.0);
        };
        gc.run();
    }
}

TEST_CASE("ce temperature knob follows the literal pseudo-code reading when enabled") {
    Rng rng(616);
    const int T = 2, N = 16;
    const auto logits = testutil::random_vec(rng, static_cast<size_t>(T) * N);
    const std::vector<int> targets{3, 7};
    const std::vector<bool> mask{true, true};
    Tape t;
    DiffArray z = t.constant({T, N}, logits);
    const double plain = ce_loss(z, targets, mask, 1.0).value();
    const double heated = ce_loss(z, targets, mask, 3.0).value();
    CHECK(plain != heated);
    // softmax(z/tau) == softmax(scale(z, 1/tau)) by construction
    DiffArray scaled = scale(z, 1.0 / 3.0);
    CHECK(heated == ce_loss(scaled, targets, mask, 1.0).value());
}

TEST_CASE("encode_sample builds teacher-forced targets over answer rows") {
    SyntheticSample s;
    s.prompt = {1, 18, 13};
    s.answer = {4};
    const EncodedSample e = encode_sample(s);
    CHECK(e.text == std::vector<int>{1, 18, 13, 4});
    CHECK(e.ce_mask == std::vector<bool>{false, false, true, false});
    CHECK(e.targets[2] == 4);
}

TEST_CASE("schedule_lr: warmup then cosine, constant variant, bad schedule") {
    StageHyper h{1.0, 16, 1, 0.1, "cosine"};
    const int total = 100;
    CHECK(schedule_lr(h, 0, total) == doctest::Approx(0.1));
    CHECK(schedule_lr(h, 9, total) == doctest::Approx(1.0));
    CHECK(schedule_lr(h, 10, total) == doctest::Approx(1.0)); // cosine start
    CHECK(schedule_lr(h, 99, total) < 0.01);
    for (int s = 11; s < 100; ++s) CHECK(schedule_lr(h, s, total) < schedule_lr(h, s - 1, total));

    h.schedule = "constant";
    CHECK(schedule_lr(h, 50, total) == 1.0);
    h.schedule = "nope";
    CHECK_THROWS_AS(schedule_lr(h, 50, total), ConfigError);
}

TEST_CASE("total_loss: lambda collapse and clone identities") {
    const ModelConfig mc = tiny_config();
    ToyVLM teacher = ToyVLM::init(mc, 1);
    auto [train, val] = generate(tiny_spec());
    const std::vector<size_t> batch{0, 1, 2};

    // lambda1 = lambda2 = 0 -> total == CE bit for bit
    {
        ToyVLM student = ToyVLM::init(mc, 2);
        student.trainable = {true, true, true};
        DistillConfig cfg = fast_cfg();
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        Tape t;
        BoundVLM sb = bind(t, student);
        BoundVLM tb = bind(t, teacher, TrainableFlags{false, false, false});
        LossBreakdown with_teacher;
        total_loss(t, sb, &tb, train, batch, cfg, StageSpec::of(StageKind::DFT), &with_teacher);
        CHECK(!with_teacher.has_align);
        CHECK(!with_teacher.has_vsd);

        Tape t2;
        BoundVLM sb2 = bind(t2, student);
        LossBreakdown sft;
        total_loss(t2, sb2, nullptr, train, batch, fast_cfg(), StageSpec::of(StageKind::SFT),
                   &sft);
        CHECK(with_teacher.total == sft.total); // bit-identical collapse
        CHECK(with_teacher.total == with_teacher.ce);
    }

    // student cloned from teacher -> align and vsd vanish
    {
        ToyVLM student = teacher;
        student.trainable = {true, true, true};
        DistillConfig cfg = fast_cfg();
        Tape t;
        BoundVLM sb = bind(t, student);
        BoundVLM tb = bind(t, teacher, TrainableFlags{false, false, false});
        LossBreakdown bd;
        total_loss(t, sb, &tb, train, batch, cfg, StageSpec::of(StageKind::DFT), &bd);
        CHECK(bd.has_align);
        CHECK(bd.has_vsd);
        CHECK(std::abs(bd.align) < 1e-10);
        CHECK(std::abs(bd.vsd) < 1e-10);
    }

    // switch disabled -> breakdown omits the vsd component
    {
        ToyVLM student = ToyVLM::init(mc, 3);
        student.trainable = {true, true, true};
        DistillConfig cfg = fast_cfg();
        cfg.switch_enabled = false;
        Tape t;
        BoundVLM sb = bind(t, student);
        BoundVLM tb = bind(t, teacher, TrainableFlags{false, false, false});
        LossBreakdown bd;
        total_loss(t, sb, &tb, train, batch, cfg, StageSpec::of(StageKind::DFT), &bd);
        CHECK(bd.has_align);
        CHECK(!bd.has_vsd);
    }
}

TEST_CASE("total equals ce_weight*ce + lambda1*align + lambda2*vsd within 1e-12") {
    const ModelConfig mc = tiny_config();
    ToyVLM teacher = ToyVLM::init(mc, 4);
    ToyVLM student = ToyVLM::init(mc, 5);
    student.trainable = {true, true, true};
    auto [train, val] = generate(tiny_spec());
    DistillConfig cfg = fast_cfg();
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 1.9;
    cfg.ce_weight = 1.3;
    Tape t;
    BoundVLM sb = bind(t, student);
    BoundVLM tb = bind(t, teacher, TrainableFlags{false, false, false});
    LossBreakdown bd;
    total_loss(t, sb, &tb, train, {0, 1, 2, 3}, cfg, StageSpec::of(StageKind::DFT), &bd);
    CHECK(std::abs(bd.total - (cfg.ce_weight * bd.ce + cfg.lambda1 * bd.align +
                               cfg.lambda2 * bd.vsd)) < 1e-12);
}

TEST_CASE("stage invariants: PT leaves V and L bit-identical; zero lr keeps everything") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());

    ToyVLM student = ToyVLM::init(mc, 6);
    const auto v_before = student.V;
    const auto l_before = student.L;
    const auto p_before = student.P;
    train_stage(student, nullptr, train, StageSpec::of(StageKind::PT), fast_cfg(), 42);
    for (size_t i = 0; i < v_before.params.size(); ++i)
        CHECK(student.V.params[i].values == v_before.params[i].values);
    for (size_t i = 0; i < l_before.params.size(); ++i)
        CHECK(student.L.params[i].values == l_before.params[i].values);
    bool p_changed = false;
    for (size_t i = 0; i < p_before.params.size(); ++i)
        p_changed |= student.P.params[i].values != p_before.params[i].values;
    CHECK(p_changed);

    ToyVLM frozen = ToyVLM::init(mc, 7);
    const ToyVLM snapshot = frozen;
    DistillConfig zero_lr = fast_cfg();
    zero_lr.ft = StageHyper{0.0, 16, 1, 0.0, "constant"};
    train_stage(frozen, nullptr, train, StageSpec::of(StageKind::SFT), zero_lr, 42);
    for (int g = 0; g < 3; ++g)
        for (size_t i = 0; i < snapshot.groups()[g]->params.size(); ++i)
            CHECK(frozen.groups()[g]->params[i].values ==
                  snapshot.groups()[g]->params[i].values);
}

TEST_CASE("train_stage rejects inconsistent teacher arguments") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());
    ToyVLM student = ToyVLM::init(mc, 8);
    ToyVLM teacher = ToyVLM::init(mc, 9);
    CHECK_THROWS_AS(
        train_stage(student, nullptr, train, StageSpec::of(StageKind::DFT), fast_cfg(), 1),
        ContractError);
    CHECK_THROWS_AS(
        train_stage(student, &teacher, train, StageSpec::of(StageKind::SFT), fast_cfg(), 1),
        ContractError);
}

TEST_CASE("train_stage is deterministic and keeps the teacher untouched") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());
    ToyVLM teacher = ToyVLM::init(mc, 10);

    std::vector<double> first_params;
    std::vector<double> first_losses;
    for (int run = 0; run < 2; ++run) {
        ToyVLM student = ToyVLM::init(mc, 11);
        TrainState st = train_stage(student, &teacher, train, StageSpec::of(StageKind::DFT),
                                    fast_cfg(), 1234);
        CHECK(st.teacher_grad_magnitude == 0.0);
        std::vector<double> params;
        for (const ParamGroup* g : student.groups())
            for (const auto& p : g->params) params.insert(params.end(), p.values.begin(), p.values.end());
        std::vector<double> losses;
        for (const auto& rec : st.log) losses.push_back(rec.losses.total);
        if (run == 0) {
            first_params = params;
            first_losses = losses;
        } else {
            CHECK(params == first_params);
            CHECK(losses == first_losses);
        }
    }
}

TEST_CASE("dft with zero lambdas reproduces sft losses bit for bit") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());
    ToyVLM teacher = ToyVLM::init(mc, 12);

    ToyVLM s1 = ToyVLM::init(mc, 13);
    DistillConfig collapsed = fast_cfg();
    collapsed.lambda1 = 0.0;
    collapsed.lambda2 = 0.0;
    TrainState dft = train_stage(s1, &teacher, train, StageSpec::of(StageKind::DFT), collapsed, 7);

    ToyVLM s2 = ToyVLM::init(mc, 13);
    TrainState sft = train_stage(s2, nullptr, train, StageSpec::of(StageKind::SFT), fast_cfg(), 7);

    REQUIRE(dft.log.size() == sft.log.size());
    for (size_t i = 0; i < dft.log.size(); ++i)
        CHECK(dft.log[i].losses.ce == sft.log[i].losses.ce);
    for (int g = 0; g < 3; ++g)
        for (size_t i = 0; i < s1.groups()[g]->params.size(); ++i)
            CHECK(s1.groups()[g]->params[i].values == s2.groups()[g]->params[i].values);
}

TEST_CASE("run_scheme executes the stage sequences and evaluates") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());
    ToyVLM teacher = ToyVLM::init(mc, 14);

    for (Scheme scheme : {Scheme::PT_SFT, Scheme::DPT_SFT, Scheme::PT_DFT, Scheme::DPT_DFT}) {
        ToyVLM student = ToyVLM::init(mc, 15);
        const bool needs_teacher = scheme != Scheme::PT_SFT;
        RunMetrics rm = run_scheme(scheme, student, needs_teacher ? &teacher : nullptr, train, val,
                                   fast_cfg(), 99);
        CHECK(!rm.log.empty());
        CHECK(rm.eval.accuracy >= 0.0);
        CHECK(rm.eval.accuracy <= 1.0);
        // step numbering is contiguous across stages
        for (size_t i = 1; i < rm.log.size(); ++i)
            CHECK(rm.log[i].step == rm.log[i - 1].step + 1);
    }
    CHECK(scheme_from_string(to_string(Scheme::DPT_DFT)) == Scheme::DPT_DFT);
    CHECK_THROWS_AS(scheme_from_string("pt-pt"), ConfigError);
}

TEST_CASE("evaluate: self agreement is 1; random weights sit near chance") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec(31337));
    ToyVLM model = ToyVLM::init(mc, 16);
    const EvalResult self = evaluate(model, val, &model);
    CHECK(self.has_agreement);
    CHECK(self.teacher_agreement == 1.0);

    // chance level on 64-way single-token answers: expect well below 0.25
    DatasetSpec big = tiny_spec(5150);
    big.n_val = 400;
    auto [t2, v2] = generate(big);
    const EvalResult rnd = evaluate(model, v2);
    CHECK(rnd.accuracy <= 0.15); // 1/64 with generous binomial headroom
    CHECK(!rnd.has_agreement);
}

TEST_CASE("nan loss aborts with a diagnostic") {
    const ModelConfig mc = tiny_config();
    auto [train, val] = generate(tiny_spec());
    ToyVLM student = ToyVLM::init(mc, 17);
    // poison one parameter so the first forward produces non-finite logits
    student.L.at("head.bias").values[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(
        train_stage(student, nullptr, train, StageSpec::of(StageKind::SFT), fast_cfg(), 1));
}
