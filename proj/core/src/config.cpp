#include "latentlm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "latentlm/errors.hpp"

namespace latentlm {

namespace {
std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}
}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, const std::string& source) {
    ConfigFile cfg;
    cfg.source_ = source;
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const auto where = source + ":" + std::to_string(line_no);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            cfg.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
        if (section.empty()) throw ConfigError(where + ": key outside any [section]");
        const auto key = std::string(trim(line.substr(0, eq)));
        if (key.empty()) throw ConfigError(where + ": empty key");
        auto& entries = cfg.sections_[section];
        if (entries.count(key)) throw ConfigError(where + ": duplicate key '" + section + "." + key + "'");
        entries[key] = Entry{std::string(trim(line.substr(eq + 1))), line_no};
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::markov: return "markov";
        case TaskKind::gmm: return "gmm";
        case TaskKind::shard: return "shard";
    }
    return "?";
}

namespace {

TaskKind parse_task(const std::string& s) {
    if (s == "markov") return TaskKind::markov;
    if (s == "gmm") return TaskKind::gmm;
    if (s == "shard") return TaskKind::shard;
    throw ConfigError("unknown task '" + s + "' (expected markov|gmm|shard)");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// One table drives parsing, unknown-key detection and serialization.
struct Field {
    std::string section, key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

template <class T>
T parse_number(const std::string& s) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("bad number '" + s + "'");
    return v;
}

std::vector<Field> fields(RunConfig& c) {
    std::vector<Field> f;
    auto sz = [&](std::string sec, std::string key, std::size_t& ref) {
        f.push_back({sec, key, [&ref](const std::string& s) { ref = parse_number<std::size_t>(s); },
                     [&ref] { return std::to_string(ref); }});
    };
    auto u64 = [&](std::string sec, std::string key, std::uint64_t& ref) {
        f.push_back({sec, key, [&ref](const std::string& s) { ref = parse_number<std::uint64_t>(s); },
                     [&ref] { return std::to_string(ref); }});
    };
    auto dbl = [&](std::string sec, std::string key, double& ref) {
        f.push_back({sec, key, [&ref](const std::string& s) { ref = parse_number<double>(s); },
                     [&ref] { return fmt(ref); }});
    };
    auto str = [&](std::string sec, std::string key, std::string& ref) {
        f.push_back({sec, key, [&ref](const std::string& s) { ref = s; }, [&ref] { return ref; }});
    };
    auto& m = c.model;
    sz("model", "d_model", m.backbone.d_model);
    sz("model", "n_layers", m.backbone.n_layers);
    sz("model", "n_heads", m.backbone.n_heads);
    sz("model", "n_kv_heads", m.backbone.n_kv_heads);
    sz("model", "d_ffn", m.backbone.d_ffn);
    sz("model", "max_seq_len", m.backbone.max_seq_len);
    dbl("model", "rope_base", m.backbone.rope_base);
    sz("model", "n_classes", m.n_classes);
    sz("model", "n_text", m.n_text);
    dbl("model", "alpha", m.alpha);
    sz("model", "n_diffusion_timesteps", m.n_diffusion_timesteps);
    sz("model", "latents_per_block", m.latents_per_block);

    sz("head", "d_latent", m.head.d_latent);
    sz("head", "width", m.head.width);
    sz("head", "n_layers", m.head.n_layers);
    sz("head", "time_embed_dim", m.head.time_embed_dim);
    f.push_back({"head", "objective", [&m](const std::string& s) { m.head.objective = diffusion::parse_objective(s); },
                 [&m] { return diffusion::to_string(m.head.objective); }});

    f.push_back({"schedule", "kind", [&m](const std::string& s) { m.schedule = diffusion::parse_schedule_kind(s); },
                 [&m] { return diffusion::to_string(m.schedule); }});
    sz("schedule", "steps", m.diffusion_steps);

    dbl("optim", "lr", c.optim.lr);
    dbl("optim", "beta1", c.optim.beta1);
    dbl("optim", "beta2", c.optim.beta2);
    dbl("optim", "eps", c.optim.eps);
    dbl("optim", "weight_decay", c.optim.weight_decay);
    dbl("optim", "grad_clip", c.train.grad_clip);
    dbl("optim", "lr_min", c.train.lr_min);

    sz("train", "total_steps", c.train.total_steps);
    sz("train", "warmup_steps", c.train.warmup_steps);
    sz("train", "batch_size", c.train.batch_size);
    dbl("train", "cfg_drop_prob", c.train.cfg_drop_prob);
    sz("train", "log_every", c.train.log_every);
    sz("train", "checkpoint_every", c.train.checkpoint_every);
    u64("train", "seed", c.train.seed);

    f.push_back({"data", "task", [&c](const std::string& s) { c.data.task = parse_task(s); },
                 [&c] { return to_string(c.data.task); }});
    sz("data", "n_train", c.data.n_train);
    sz("data", "n_eval", c.data.n_eval);
    sz("data", "length", c.data.length);
    str("data", "shard", c.data.shard);
    str("data", "eval_shard", c.data.eval_shard);

    auto& g = c.generate;
    f.push_back({"sampler", "method", [&g](const std::string& s) { g.sampler.method = diffusion::parse_sampler_method(s); },
                 [&g] { return diffusion::to_string(g.sampler.method); }});
    sz("sampler", "steps", g.sampler.steps);
    sz("sampler", "order", g.sampler.order);
    dbl("sampler", "cfg_scale", g.sampler.cfg_scale);
    f.push_back({"sampler", "discrete", [&g](const std::string& s) { g.discrete.method = parse_discrete_method(s); },
                 [&g] { return to_string(g.discrete.method); }});
    dbl("sampler", "top_p", g.discrete.top_p);
    dbl("sampler", "temperature", g.discrete.temperature);
    sz("sampler", "max_new", g.max_new);
    sz("sampler", "n_samples", g.n_samples);
    str("sampler", "prompt", g.prompt);

    auto& v = c.vae;
    sz("vae", "d_input", v.d_input);
    sz("vae", "d_latent", v.d_latent);
    f.push_back({"vae", "policy", [&v](const std::string& s) { v.policy.kind = vae::parse_variance_kind(s); },
                 [&v] { return vae::to_string(v.policy.kind); }});
    dbl("vae", "policy_value", v.policy.value);
    dbl("vae", "beta_vae", v.beta_vae);
    sz("vae", "hidden", v.hidden);
    sz("vae", "hidden_layers", v.hidden_layers);
    sz("vae", "steps", c.vae_train.steps);
    sz("vae", "batch_size", c.vae_train.batch_size);
    dbl("vae", "lr", c.vae_train.lr);
    sz("vae", "n_train", c.vae_n_train);
    return f;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (train.warmup_steps > train.total_steps) throw ConfigError("train.warmup_steps exceeds train.total_steps");
    if (train.cfg_drop_prob < 0.0 || train.cfg_drop_prob > 1.0) throw ConfigError("train.cfg_drop_prob outside [0, 1]");
    if (train.log_every < 1 || train.checkpoint_every < 1) throw ConfigError("train: log/checkpoint intervals must be positive");
    if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (data.task == TaskKind::shard && data.shard.empty()) throw ConfigError("data.shard is required for task = shard");
    vae.validate();
}

RunConfig run_config_from(const ConfigFile& file) {
    RunConfig cfg;
    auto table = fields(cfg);
    for (const auto& [section, entries] : file.sections()) {
        for (const auto& [key, entry] : entries) {
            const auto where = file.source() + ":" + std::to_string(entry.line);
            auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
            if (it == table.end()) throw ConfigError(where + ": unknown key '" + section + "." + key + "'");
            try {
                it->set(entry.value);
            } catch (const ConfigError& e) {
                throw ConfigError(where + ": " + section + "." + key + ": " + e.what());
            }
        }
        const bool known = std::any_of(table.begin(), table.end(), [&](const Field& f) { return f.section == section; });
        if (!known) throw ConfigError(file.source() + ": unknown section [" + section + "]");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) { return run_config_from(ConfigFile::load(path)); }

std::string to_text(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out, section;
    for (const auto& f : fields(copy)) {
        if (f.section != section) {
            if (!section.empty()) out += '\n';
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += f.key + " = " + f.get() + "\n";
    }
    return out;
}

}  // namespace latentlm
