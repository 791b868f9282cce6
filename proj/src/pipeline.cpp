#include "elab/pipeline.hpp"

#include "elab/hash.hpp"
#include "elab/report.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace elab {

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void atomic_write(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("cannot open " + tmp.string());
        f << content;
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::string trigger_id(const std::vector<int>& trigger) {
    std::string out;
    for (size_t i = 0; i < trigger.size(); ++i) {
        if (i) out += '+';
        out += std::to_string(trigger[i]);
    }
    return out;
}

} // namespace

DiffusionSchedule make_schedule(const ScheduleConfig& cfg) {
    return make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

Experiment parse_experiment(const nlohmann::json& j) {
    Experiment ex;
    ex.seed = j.value("seed", 0ull);

    if (j.contains("world")) {
        const auto& w = j["world"];
        ex.world_cfg.concepts = w.value("concepts", ex.world_cfg.concepts);
        ex.world_cfg.radius = w.value("radius", ex.world_cfg.radius);
        ex.world_cfg.sigma = w.value("sigma", ex.world_cfg.sigma);
        ex.world_cfg.data_dim = w.value("data_dim", ex.world_cfg.data_dim);
        ex.world_cfg.prompt_len = w.value("prompt_len", ex.world_cfg.prompt_len);
        ex.world_cfg.vocab_size = w.value("vocab_size", ex.world_cfg.vocab_size);
        ex.world_cfg.template_tokens = w.value("template_tokens", ex.world_cfg.template_tokens);
        ex.world_cfg.trigger_tokens = w.value("trigger_tokens", ex.world_cfg.trigger_tokens);
        ex.world_cfg.trigger_len = w.value("trigger_len", ex.world_cfg.trigger_len);
        ex.world_cfg.abstain_radius = w.value("abstain_radius", ex.world_cfg.abstain_radius);
    }
    ex.world_cfg.seed = j.value("world_seed", ex.seed);

    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        ex.sched_cfg.T = s.value("T", ex.sched_cfg.T);
        ex.sched_cfg.beta_start = s.value("beta_start", ex.sched_cfg.beta_start);
        ex.sched_cfg.beta_end = s.value("beta_end", ex.sched_cfg.beta_end);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        ex.train_cfg.steps = t.value("steps", ex.train_cfg.steps);
        ex.train_cfg.batch = t.value("batch", ex.train_cfg.batch);
        ex.train_cfg.lr = t.value("lr", ex.train_cfg.lr);
        ex.train_cfg.cond_drop = t.value("cond_drop", ex.train_cfg.cond_drop);
        ex.train_cfg.val_draws = t.value("val_draws", ex.train_cfg.val_draws);
    }
    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        ex.sampler_cfg.steps = s.value("steps", ex.sampler_cfg.steps);
        ex.sampler_cfg.guidance = s.value("guidance", ex.sampler_cfg.guidance);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        ex.eval_samples = e.value("samples_per_category", ex.eval_samples);
        ex.frechet_samples = e.value("frechet_samples", ex.frechet_samples);
        ex.anomaly_stat = e.value("anomaly_stat", ex.anomaly_stat);
    }
    for (const auto& a : j.value("attacks", nlohmann::json::array()))
        ex.attacks.push_back(attack_kind_from_name(a.get<std::string>()));
    for (const auto& e : j.value("erasures", nlohmann::json::array()))
        ex.erasures.push_back(erasure_method_from_name(e.get<std::string>()));
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        for (const auto& t : g.value("triggers", nlohmann::json::array()))
            ex.triggers.push_back(t.get<std::vector<int>>());
        for (const auto& t : g.value("targets", nlohmann::json::array()))
            ex.targets.push_back(t.get<int>());
    }
    if (j.contains("protocols")) {
        const auto& p = j["protocols"];
        ex.protocols.trajectory = p.value("trajectory", false);
        ex.protocols.detect = p.value("detect", false);
        ex.protocols.exposure = p.value("exposure", false);
        ex.protocols.trajectory_every = p.value("trajectory_every", 5);
        ex.protocols.detect_prompts = p.value("detect_prompts", 40);
        ex.protocols.exposure_prompts = p.value("exposure_prompts", 200);
        ex.protocols.exposure_region = p.value("exposure_region", 4);
    }
    ex.attack_overrides = j.value("attack_overrides", nlohmann::json::object());
    ex.erasure_overrides = j.value("erasure_overrides", nlohmann::json::object());
    ex.max_cells = j.value("_max_cells", -1);
    return ex;
}

nlohmann::json Experiment::materialized() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["world"] = {{"concepts", world_cfg.concepts},
                  {"radius", world_cfg.radius},
                  {"sigma", world_cfg.sigma},
                  {"data_dim", world_cfg.data_dim},
                  {"prompt_len", world_cfg.prompt_len},
                  {"vocab_size", world_cfg.vocab_size},
                  {"template_tokens", world_cfg.template_tokens},
                  {"trigger_tokens", world_cfg.trigger_tokens},
                  {"trigger_len", world_cfg.trigger_len},
                  {"abstain_radius", world_cfg.abstain_radius}};
    j["world_seed"] = world_cfg.seed;
    j["schedule"] = {{"T", sched_cfg.T},
                     {"beta_start", sched_cfg.beta_start},
                     {"beta_end", sched_cfg.beta_end}};
    j["train"] = {{"steps", train_cfg.steps},
                  {"batch", train_cfg.batch},
                  {"lr", train_cfg.lr},
                  {"cond_drop", train_cfg.cond_drop},
                  {"val_draws", train_cfg.val_draws}};
    j["sampler"] = {{"steps", sampler_cfg.steps}, {"guidance", sampler_cfg.guidance}};
    j["eval"] = {{"samples_per_category", eval_samples},
                 {"frechet_samples", frechet_samples},
                 {"anomaly_stat", anomaly_stat}};
    nlohmann::json atk = nlohmann::json::array();
    for (auto a : attacks) atk.push_back(attack_kind_name(a));
    j["attacks"] = atk;
    nlohmann::json ers = nlohmann::json::array();
    for (auto e : erasures) ers.push_back(erasure_method_name(e));
    j["erasures"] = ers;
    j["grid"] = {{"triggers", triggers}, {"targets", targets}};
    j["protocols"] = {{"trajectory", protocols.trajectory},
                      {"detect", protocols.detect},
                      {"exposure", protocols.exposure},
                      {"trajectory_every", protocols.trajectory_every},
                      {"detect_prompts", protocols.detect_prompts},
                      {"exposure_prompts", protocols.exposure_prompts},
                      {"exposure_region", protocols.exposure_region}};
    j["attack_overrides"] = attack_overrides;
    j["erasure_overrides"] = erasure_overrides;
    if (max_cells >= 0) j["_max_cells"] = max_cells;
    return j;
}

AttackConfig make_attack_config(const Experiment& ex, const ConceptWorld& world, AttackKind kind,
                                const std::vector<int>& trigger, int target) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.trigger = trigger;
    cfg.target = target;
    cfg.retention = world.retention_pool;
    cfg.latent_sampler = ex.sampler_cfg;
    switch (kind) {
        case AttackKind::TextEnc:
            cfg.steps = 3000;
            cfg.lr = 3e-4;
            cfg.corpus_per_step = 16;
            break;
        case AttackKind::XAttn:
            // the attacker preserves every concept except nothing: stealth
            // regularizers cover all non-target concepts
            cfg.steps = 0;
            cfg.retention.clear();
            for (int c = 0; c < world.cfg.concepts; ++c)
                if (c != target) cfg.retention.push_back(c);
            break;
        case AttackKind::Disa:
            cfg.steps = 2000;
            cfg.lr = 1e-3;
            cfg.rank = 4;
            cfg.alpha = 0.5;
            break;
    }
    const std::string key = attack_kind_name(kind);
    if (ex.attack_overrides.contains(key)) {
        const auto& o = ex.attack_overrides[key];
        cfg.steps = o.value("steps", cfg.steps);
        cfg.lr = o.value("lr", cfg.lr);
        cfg.rank = o.value("rank", cfg.rank);
        cfg.alpha = o.value("alpha", cfg.alpha);
        cfg.use_templates = o.value("use_templates", cfg.use_templates);
        cfg.disable_Lr = o.value("disable_Lr", cfg.disable_Lr);
        cfg.disable_Lq = o.value("disable_Lq", cfg.disable_Lq);
        cfg.append_trigger = o.value("append_trigger", cfg.append_trigger);
        cfg.mean_pool_embedding = o.value("mean_pool_embedding", cfg.mean_pool_embedding);
        cfg.corpus_per_step = o.value("corpus_per_step", cfg.corpus_per_step);
        cfg.utility_weight = o.value("utility_weight", cfg.utility_weight);
        cfg.lora_scale = o.value("lora_scale", cfg.lora_scale);
    }
    return cfg;
}

ErasureConfig make_erasure_config(const Experiment& ex, const ConceptWorld& world,
                                  ErasureMethod method, const std::vector<int>& targets) {
    ErasureConfig cfg;
    cfg.method = method;
    cfg.targets = targets;
    // defender-side preservation set: every concept that is not being erased
    // (the measured retention pool is a subset of this)
    for (int c = 0; c < world.cfg.concepts; ++c)
        if (std::find(targets.begin(), targets.end(), c) == targets.end())
            cfg.retention.push_back(c);
    cfg.latent_sampler = ex.sampler_cfg;
    switch (method) {
        case ErasureMethod::ESD:
            cfg.iterations = 200;
            cfg.lr = 3e-4;
            cfg.mu = 1.0;
            cfg.xattn_only = true;
            break;
        case ErasureMethod::UCE:
            cfg.iterations = 1;
            break;
        case ErasureMethod::MACE:
            cfg.iterations = 3;
            cfg.stage2_steps = 150;
            cfg.stage2_lr = 1e-2;
            break;
        case ErasureMethod::RECE:
            cfg.iterations = 3;
            cfg.lambda = 0.1;
            break;
        case ErasureMethod::Receler:
            cfg.iterations = 100;
            cfg.lr = 5e-4;
            cfg.adv_steps = 10;
            cfg.adv_lr = 0.2;
            cfg.erase_steps_per_iter = 3;
            break;
    }
    const std::string key = erasure_method_name(method);
    if (ex.erasure_overrides.contains(key)) {
        const auto& o = ex.erasure_overrides[key];
        cfg.iterations = o.value("iterations", cfg.iterations);
        cfg.lr = o.value("lr", cfg.lr);
        cfg.mu = o.value("mu", cfg.mu);
        cfg.lambda = o.value("lambda", cfg.lambda);
        cfg.rank = o.value("rank", cfg.rank);
        cfg.xattn_only = o.value("xattn_only", cfg.xattn_only);
        cfg.anchor_mode = o.value("anchor_mode", cfg.anchor_mode);
        cfg.adv_steps = o.value("adv_steps", cfg.adv_steps);
        cfg.adv_lr = o.value("adv_lr", cfg.adv_lr);
        cfg.erase_steps_per_iter = o.value("erase_steps_per_iter", cfg.erase_steps_per_iter);
        cfg.stage2_steps = o.value("stage2_steps", cfg.stage2_steps);
        cfg.stage2_lr = o.value("stage2_lr", cfg.stage2_lr);
        cfg.stage2_gen = o.value("stage2_gen", cfg.stage2_gen);
        cfg.checkpoint_every = o.value("checkpoint_every", cfg.checkpoint_every);
    }
    return cfg;
}

EvalConfig make_eval_config(const Experiment& ex, const ConceptWorld& world,
                            const std::vector<int>& trigger, int target) {
    EvalConfig cfg;
    cfg.samples_per_category = ex.eval_samples;
    cfg.frechet_samples = ex.frechet_samples;
    cfg.sampler = ex.sampler_cfg;
    cfg.trigger = trigger;
    cfg.target = target;
    cfg.retention = world.retention_pool;
    cfg.heldout = world.heldout_pool;
    cfg.anomaly_stat = ex.anomaly_stat;
    return cfg;
}

std::vector<int> exposure_region(const ConceptWorld& world, int target, int size) {
    const auto& pool = world.target_pool;
    auto it = std::find(pool.begin(), pool.end(), target);
    size_t start = it == pool.end() ? 0 : size_t(it - pool.begin());
    std::vector<int> region;
    for (int i = 0; i < size && i < int(pool.size()); ++i)
        region.push_back(pool[(start + i) % pool.size()]);
    return region;
}

nlohmann::json row_to_json(const CsvRow& row) {
    nlohmann::json j;
    j["run_id"] = row.run_id;
    j["phase"] = row.phase;
    j["attack"] = row.attack;
    j["erasure"] = row.erasure;
    j["trigger"] = row.trigger;
    j["target"] = row.target;
    j["iteration"] = row.iteration;
    j["acc_r"] = row.rep.acc_r;
    j["acc_o"] = row.rep.acc_o;
    j["acc_e"] = row.rep.acc_e;
    j["acc_dagger"] = row.rep.acc_dagger;
    j["frechet"] = row.rep.frechet;
    j["exposure_e"] = row.rep.exposure_e;
    j["exposure_dagger"] = row.rep.exposure_dagger;
    if (!std::isnan(row.rep.auc)) j["auc"] = row.rep.auc;
    j["seed"] = row.rep.seed;
    j["config_hash"] = row.rep.config_hash;
    j["snapshot_hash"] = row.rep.snapshot_hash;
    return j;
}

CsvRow row_from_json(const nlohmann::json& j) {
    CsvRow r;
    r.run_id = j.at("run_id");
    r.phase = j.at("phase");
    r.attack = j.at("attack");
    r.erasure = j.at("erasure");
    r.trigger = j.at("trigger");
    r.target = j.at("target");
    r.iteration = j.at("iteration");
    r.rep.acc_r = j.at("acc_r");
    r.rep.acc_o = j.at("acc_o");
    r.rep.acc_e = j.at("acc_e");
    r.rep.acc_dagger = j.at("acc_dagger");
    r.rep.frechet = j.at("frechet");
    r.rep.exposure_e = j.at("exposure_e");
    r.rep.exposure_dagger = j.at("exposure_dagger");
    r.rep.auc = j.contains("auc") ? j.at("auc").get<double>()
                                  : std::numeric_limits<double>::quiet_NaN();
    r.rep.seed = j.at("seed");
    r.rep.config_hash = j.value("config_hash", "");
    r.rep.snapshot_hash = j.value("snapshot_hash", "");
    return r;
}

// ---- pipeline ----

namespace {

struct Cell {
    std::string id;
    std::string kind; // clean_eval | poison | erase_clean | erase_pois
    AttackKind attack = AttackKind::Disa;
    ErasureMethod erasure = ErasureMethod::UCE;
    bool has_attack = false, has_erasure = false;
    std::vector<int> trigger;
    int target = -1;
    int stage = 1;
    std::string dep_snapshot; // checkpoint file this cell reads
    std::string out_snapshot; // checkpoint file this cell writes
};

struct PipelineState {
    Experiment ex;
    ConceptWorld world;
    DiffusionSchedule sched;
    fs::path out;
    std::string config_hash;
    std::mutex mu;
    nlohmann::json manifest;
    std::atomic<int> executed{0};
    std::atomic<bool> budget_exhausted{false};
    std::atomic<bool> any_failed{false};
};

std::vector<Prompt> exposure_prompts(const ConceptWorld& world, const std::vector<int>& region,
                                     int n, const std::vector<int>& prepend) {
    auto eval_ids = world.templates.eval_ids();
    std::vector<Prompt> prompts;
    for (int i = 0; i < n; ++i) {
        int c = region[size_t(i) % region.size()];
        int tmpl = eval_ids[size_t(i / region.size()) % eval_ids.size()];
        prompts.push_back(render_prompt(world, tmpl, {world.concept_tokens[c]}, prepend,
                                        prepend.empty() ? PromptRole::Other
                                                        : PromptRole::TriggerPrepended));
    }
    return prompts;
}

void run_detect_protocol(PipelineState& st, const ModelSnapshot& snap, const EvalConfig& ecfg,
                         const Cell& cell, CsvRow& row) {
    auto eval_ids = st.world.templates.eval_ids();
    std::vector<std::pair<double, int>> scored;
    Rng rng = Rng(st.ex.seed).fork(fnv1a(cell.id + "/detect"));
    int n = st.ex.protocols.detect_prompts;
    for (int i = 0; i < n; ++i) {
        int tmpl = eval_ids[size_t(i) % eval_ids.size()];
        Prompt pt = render_prompt(st.world, tmpl, cell.trigger, {}, PromptRole::Trigger);
        Rng r1 = rng.fork(2 * i);
        scored.push_back({anomaly_score(st.world, st.sched, snap, pt, ecfg, r1), 1});
        // clean prompts alternate between the target and held-out concepts
        int c = (i % 2 == 0) ? cell.target
                             : st.world.heldout_pool[size_t(i / 2) % st.world.heldout_pool.size()];
        Prompt pc = render_prompt(st.world, tmpl, {st.world.concept_tokens[c]});
        Rng r2 = rng.fork(2 * i + 1);
        scored.push_back({anomaly_score(st.world, st.sched, snap, pc, ecfg, r2), 0});
    }
    row.rep.auc = roc_auc(scored);
    std::ostringstream os;
    os << scores_csv_header() << "\n";
    for (const auto& [s, y] : scored) {
        char buf[64];
        snprintf(buf, sizeof(buf), "%s,%d,%.17g", cell.id.c_str(), y, s);
        os << buf << "\n";
    }
    atomic_write(st.out / "cells" / (cell.id + ".scores.csv"), os.str());
}

void run_exposure_protocol(PipelineState& st, const ModelSnapshot& snap, const Cell& cell,
                           CsvRow& row) {
    auto region = exposure_region(st.world, cell.target, st.ex.protocols.exposure_region);
    auto raw = exposure_prompts(st.world, region, st.ex.protocols.exposure_prompts, {});
    auto trig = exposure_prompts(st.world, region, st.ex.protocols.exposure_prompts, cell.trigger);
    Rng r1 = Rng(st.ex.seed).fork(fnv1a(cell.id + "/exp_e"));
    Rng r2 = Rng(st.ex.seed).fork(fnv1a(cell.id + "/exp_t"));
    row.rep.exposure_e = exposure_count(st.world, st.sched, snap, raw, region,
                                        st.ex.sampler_cfg, r1);
    row.rep.exposure_dagger = exposure_count(st.world, st.sched, snap, trig, region,
                                             st.ex.sampler_cfg, r2);
}

void run_trajectory_protocol(PipelineState& st, const std::vector<Checkpoint>& checkpoints,
                             const Cell& cell, std::vector<CsvRow>& extra_rows) {
    EvalConfig ecfg = make_eval_config(st.ex, st.world, cell.trigger, cell.target);
    Rng rng = Rng(st.ex.seed).fork(fnv1a(cell.id + "/traj"));
    TrajectoryRecord rec = trajectory_eval(st.world, st.sched, checkpoints, ecfg, rng);
    const std::string method = erasure_method_name(cell.erasure);
    fs::path dir = st.out / "checkpoints" / "trajectory" / cell.id / method;
    fs::create_directories(dir);
    for (size_t i = 0; i < checkpoints.size(); ++i) {
        char name[32];
        snprintf(name, sizeof(name), "%05d.json", checkpoints[i].iteration);
        atomic_write(dir / name, snapshot_to_json(checkpoints[i].snapshot).dump());
    }
    for (size_t i = 0; i < rec.iterations.size(); ++i) {
        CsvRow r;
        char rid[160];
        snprintf(rid, sizeof(rid), "%s-traj%05d", cell.id.c_str(), rec.iterations[i]);
        r.run_id = rid;
        r.phase = "trajectory";
        r.attack = cell.has_attack ? attack_kind_name(cell.attack) : "";
        r.erasure = method;
        r.trigger = trigger_id(cell.trigger);
        r.target = cell.target;
        r.iteration = rec.iterations[i];
        r.rep = rec.reports[i];
        r.rep.seed = st.ex.seed;
        r.rep.config_hash = st.config_hash;
        extra_rows.push_back(std::move(r));
    }
}

void execute_cell(PipelineState& st, const Cell& cell) {
    fs::path row_path = st.out / "cells" / (cell.id + ".json");
    CsvRow row;
    row.run_id = cell.id;
    row.target = cell.target;
    row.trigger = trigger_id(cell.trigger);
    row.rep.seed = st.ex.seed;
    row.rep.config_hash = st.config_hash;
    std::vector<CsvRow> extra_rows;

    ModelSnapshot input = load_snapshot((st.out / cell.dep_snapshot).string());
    EvalConfig ecfg = make_eval_config(st.ex, st.world, cell.trigger, cell.target);
    Rng cell_rng = Rng(st.ex.seed).fork(fnv1a(cell.id));

    if (cell.kind == "clean_eval") {
        row.phase = "clean";
        Rng eval_rng = cell_rng.fork(1);
        row.rep = accuracy_suite(st.world, st.sched, input, ecfg, eval_rng);
    } else if (cell.kind == "poison") {
        row.phase = "poisoned";
        row.attack = attack_kind_name(cell.attack);
        AttackConfig acfg = make_attack_config(st.ex, st.world, cell.attack, cell.trigger,
                                               cell.target);
        Rng atk_rng = cell_rng.fork(0);
        ModelSnapshot poisoned = run_attack(st.world, st.sched, input, acfg, atk_rng);
        poisoned.prov.run_id = cell.id;
        atomic_write(st.out / cell.out_snapshot, snapshot_to_json(poisoned).dump());
        Rng eval_rng = cell_rng.fork(1);
        row.rep = accuracy_suite(st.world, st.sched, poisoned, ecfg, eval_rng);
        if (st.ex.protocols.detect) run_detect_protocol(st, poisoned, ecfg, cell, row);
    } else { // erase_clean / erase_pois
        row.phase = cell.kind == "erase_clean" ? "erased_clean" : "erased_poisoned";
        if (cell.has_attack) row.attack = attack_kind_name(cell.attack);
        row.erasure = erasure_method_name(cell.erasure);
        std::vector<int> targets = {cell.target};
        if (st.ex.protocols.exposure)
            targets = exposure_region(st.world, cell.target, st.ex.protocols.exposure_region);
        ErasureConfig cfg = make_erasure_config(st.ex, st.world, cell.erasure, targets);
        if (st.ex.protocols.trajectory && cfg.checkpoint_every == 0)
            cfg.checkpoint_every = st.ex.protocols.trajectory_every;
        Rng er_rng = cell_rng.fork(0);
        ErasureResult er = run_erasure(st.world, st.sched, input, cfg, er_rng);
        er.snapshot.prov.run_id = cell.id;
        row.iteration = er.snapshot.prov.iteration;
        atomic_write(st.out / cell.out_snapshot, snapshot_to_json(er.snapshot).dump());
        Rng eval_rng = cell_rng.fork(1);
        row.rep = accuracy_suite(st.world, st.sched, er.snapshot, ecfg, eval_rng);
        if (st.ex.protocols.exposure) run_exposure_protocol(st, er.snapshot, cell, row);
        if (st.ex.protocols.trajectory) run_trajectory_protocol(st, er.checkpoints, cell, extra_rows);
    }

    row.rep.seed = st.ex.seed;
    row.rep.config_hash = st.config_hash;

    nlohmann::json cell_doc;
    cell_doc["row"] = row_to_json(row);
    nlohmann::json extras = nlohmann::json::array();
    for (const auto& r : extra_rows) extras.push_back(row_to_json(r));
    cell_doc["extra_rows"] = extras;
    atomic_write(row_path, cell_doc.dump());
}

} // namespace

int run_pipeline(const nlohmann::json& config, const PipelineOptions& opts) {
    PipelineState st;
    st.ex = parse_experiment(config);
    st.out = opts.out_dir;
    fs::create_directories(st.out / "cells");
    fs::create_directories(st.out / "checkpoints");
    fs::create_directories(st.out / "reports");

    st.world = build_world(st.ex.world_cfg);
    st.sched = make_schedule(st.ex.sched_cfg);
    st.config_hash = sha256_hex(st.ex.materialized().dump());
    atomic_write(st.out / "world.json", st.world.to_json().dump());

    st.manifest["config"] = st.ex.materialized();
    st.manifest["config_hash"] = st.config_hash;
    st.manifest["world_hash"] = st.world.hash();

    // expand the grid into cells
    std::vector<Cell> cells;
    const std::string base_file = "checkpoints/base.json";
    char sbuf[32];
    snprintf(sbuf, sizeof(sbuf), "s%llu", (unsigned long long)st.ex.seed);
    const std::string sp = sbuf;
    for (int tgt : st.ex.targets) {
        for (const auto& trig : st.ex.triggers) {
            Cell c;
            c.kind = "clean_eval";
            c.id = sp + "-clean-t" + std::to_string(tgt) + "-g" + trigger_id(trig);
            c.trigger = trig;
            c.target = tgt;
            c.stage = 1;
            c.dep_snapshot = base_file;
            cells.push_back(c);
            for (auto atk : st.ex.attacks) {
                Cell p;
                p.kind = "poison";
                p.attack = atk;
                p.has_attack = true;
                p.trigger = trig;
                p.target = tgt;
                p.stage = 1;
                p.id = sp + "-pois-" + attack_kind_name(atk) + "-t" + std::to_string(tgt) + "-g" +
                       trigger_id(trig);
                p.dep_snapshot = base_file;
                p.out_snapshot = "checkpoints/" + p.id + ".json";
                cells.push_back(p);
                for (auto er : st.ex.erasures) {
                    Cell e;
                    e.kind = "erase_pois";
                    e.attack = atk;
                    e.has_attack = true;
                    e.erasure = er;
                    e.has_erasure = true;
                    e.trigger = trig;
                    e.target = tgt;
                    e.stage = 2;
                    e.id = sp + "-er-" + erasure_method_name(er) + "-" + attack_kind_name(atk) +
                           "-t" + std::to_string(tgt) + "-g" + trigger_id(trig);
                    e.dep_snapshot = p.out_snapshot;
                    e.out_snapshot = "checkpoints/" + e.id + ".json";
                    cells.push_back(e);
                }
            }
        }
        // erased-from-clean controls, evaluated with the first trigger
        if (!st.ex.triggers.empty()) {
            for (auto er : st.ex.erasures) {
                Cell e;
                e.kind = "erase_clean";
                e.erasure = er;
                e.has_erasure = true;
                e.trigger = st.ex.triggers[0];
                e.target = tgt;
                e.stage = 2;
                e.id = sp + "-er-" + erasure_method_name(er) + "-clean-t" + std::to_string(tgt);
                e.dep_snapshot = base_file;
                e.out_snapshot = "checkpoints/" + e.id + ".json";
                cells.push_back(e);
            }
        }
    }

    nlohmann::json cell_list = nlohmann::json::array();
    for (const auto& c : cells)
        cell_list.push_back({{"id", c.id}, {"kind", c.kind}, {"stage", c.stage},
                             {"status", "pending"}});
    st.manifest["cells"] = cell_list;

    // base model, cached by config hash
    bool need_base = !cells.empty();
    if (need_base) {
        fs::path base_path = st.out / base_file;
        std::string base_key = sha256_hex(st.world.hash() + st.ex.materialized()["train"].dump() +
                                          st.ex.materialized()["schedule"].dump() +
                                          std::to_string(st.ex.seed));
        bool have = false;
        if (fs::exists(base_path)) {
            try {
                ModelSnapshot cached = load_snapshot(base_path.string());
                have = cached.prov.config_hash == base_key;
            } catch (...) {
                have = false;
            }
        }
        if (!have) {
            Rng rng = Rng(st.ex.seed).fork(fnv1a("train_base"));
            TrainResult tr = train_base(st.world, st.sched, st.ex.train_cfg, rng);
            tr.snapshot.prov.config_hash = base_key;
            tr.snapshot.prov.run_id = sp + "-base";
            atomic_write(base_path, snapshot_to_json(tr.snapshot).dump());
            st.manifest["base"] = {{"val_eps_mse", tr.val_eps_mse},
                                   {"oracle_eps_mse", tr.oracle_eps_mse},
                                   {"model_oracle_mse", tr.model_oracle_mse},
                                   {"converged", tr.converged}};
        }
        st.manifest["base_key"] = base_key;
    }

    // run cells stage by stage with a small worker pool
    auto set_status = [&](const std::string& id, const std::string& status,
                          const std::string& error = "") {
        std::lock_guard<std::mutex> lock(st.mu);
        for (auto& c : st.manifest["cells"]) {
            if (c["id"] == id) {
                c["status"] = status;
                if (!error.empty()) c["error"] = error;
            }
        }
    };

    for (int stage = 1; stage <= 2; ++stage) {
        std::vector<const Cell*> todo;
        for (const auto& c : cells)
            if (c.stage == stage) todo.push_back(&c);
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= todo.size()) return;
                const Cell& c = *todo[i];
                fs::path row_path = st.out / "cells" / (c.id + ".json");
                if (fs::exists(row_path)) { // completed previously
                    set_status(c.id, "done");
                    continue;
                }
                if (st.ex.max_cells >= 0 && st.executed.load() >= st.ex.max_cells) {
                    st.budget_exhausted = true;
                    continue;
                }
                st.executed.fetch_add(1);
                try {
                    if (!fs::exists(st.out / c.dep_snapshot))
                        throw std::runtime_error("missing input snapshot " + c.dep_snapshot);
                    execute_cell(st, c);
                    set_status(c.id, "done");
                } catch (const std::exception& e) {
                    st.any_failed = true;
                    set_status(c.id, "failed", e.what());
                    std::cerr << "cell " << c.id << " failed: " << e.what() << "\n";
                }
            }
        };
        int jobs = std::max(1, opts.jobs);
        std::vector<std::thread> pool;
        for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // results.csv regenerated from the per-cell records, sorted by run_id
    std::vector<CsvRow> rows;
    for (const auto& entry : fs::directory_iterator(st.out / "cells")) {
        if (entry.path().extension() != ".json") continue;
        nlohmann::json doc = nlohmann::json::parse(read_file(entry.path()));
        rows.push_back(row_from_json(doc.at("row")));
        for (const auto& r : doc.at("extra_rows")) rows.push_back(row_from_json(r));
    }
    std::sort(rows.begin(), rows.end(),
              [](const CsvRow& a, const CsvRow& b) { return a.run_id < b.run_id; });
    std::ostringstream csv;
    csv << csv_header() << "\n";
    for (const auto& r : rows) csv << csv_line(r) << "\n";
    atomic_write(st.out / "results.csv", csv.str());

    st.manifest["rows"] = int(rows.size());
    atomic_write(st.out / "manifest.json", st.manifest.dump(2) + "\n");

    if (st.any_failed) return 1;
    if (st.budget_exhausted) return 2;
    return 0;
}

} // namespace elab
