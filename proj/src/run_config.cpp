#include "uvet/run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace uvet {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value for " + key + ": '" + value + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    const long long v = parse_int(key, value);
    if (v < 0) throw ConfigError("config: " + key + " must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean value for " + key + ": '" + value + "'");
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_u64(key, item));
    }
    return out;
}

template <class Fn>
void for_each_kv(const std::string& text, Fn&& fn) {
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
        }
        fn(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::size_t scaled_layer(std::size_t num_layers, std::size_t numer) {
    // ceil(L * numer / 24), at least 1
    const std::size_t v = (num_layers * numer + 23) / 24;
    return std::max<std::size_t>(1, std::min(v, num_layers));
}

}  // namespace

LayerRange default_source_layers(std::size_t num_layers) {
    return LayerRange{1, scaled_layer(num_layers, 10)};
}

LayerRange default_mask_layers(std::size_t num_layers) {
    return LayerRange{scaled_layer(num_layers, 13), scaled_layer(num_layers, 17)};
}

MaskConfig RunConfig::resolve_mask_config(std::size_t num_layers) const {
    MaskConfig mc;
    mc.source_layers = source_layers.value_or(default_source_layers(num_layers));
    mc.mask_layers = mask_layers.value_or(default_mask_layers(num_layers));
    mc.sigma_th = sigma_th;
    if (mc.source_layers.empty() || mc.source_layers.first < 1 || mc.source_layers.last > num_layers) {
        throw ConfigError("config: mask.source_layers out of range for depth " + std::to_string(num_layers));
    }
    if (!mc.mask_layers.empty() && (mc.mask_layers.first < 1 || mc.mask_layers.last > num_layers)) {
        throw ConfigError("config: mask.mask_layers out of range for depth " + std::to_string(num_layers));
    }
    return mc;
}

LayerRange parse_layer_range(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        const auto v = static_cast<std::size_t>(parse_u64("layer range", text));
        return LayerRange{v, v};
    }
    LayerRange r;
    r.first = static_cast<std::size_t>(parse_u64("layer range", trim(text.substr(0, colon))));
    r.last = static_cast<std::size_t>(parse_u64("layer range", trim(text.substr(colon + 1))));
    if (r.empty()) throw ConfigError("config: empty layer range '" + text + "'");
    return r;
}

void RunConfig::apply_kv(const std::string& key, const std::string& value) {
    if (key == "model.checkpoint") checkpoint = value;
    else if (key == "attack.k") attack.budget_k = static_cast<int>(parse_int(key, value));
    else if (key == "attack.alpha") attack.step_alpha = static_cast<int>(parse_int(key, value));
    else if (key == "attack.iterations") attack.iterations = static_cast<int>(parse_int(key, value));
    else if (key == "attack.seed") attack.rng_seed = parse_u64(key, value);
    else if (key == "attack.init_noise_seed") attack.init_noise_seed = parse_u64(key, value);
    else if (key == "mask.source_layers") source_layers = parse_layer_range(value);
    else if (key == "mask.sigma_th") sigma_th = parse_double(key, value);
    else if (key == "mask.mask_layers") mask_layers = parse_layer_range(value);
    else if (key == "mask.soft_factor") {
        soft_mask_factor = parse_double(key, value);
        if (soft_mask_factor < 0.0 || soft_mask_factor >= 1.0) {
            throw ConfigError("config: mask.soft_factor must be in [0, 1)");
        }
    }
    else if (key == "mc.dropout_p") mc_dropout_p = parse_double(key, value);
    else if (key == "mc.samples") mc_samples = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "mc.seed") mc_seed = parse_u64(key, value);
    else if (key == "run.output_dir") out_dir = value;
    else if (key == "run.parallelism") parallelism = static_cast<std::size_t>(parse_u64(key, value));
    else if (key == "run.seed") global_seed = parse_u64(key, value);
    else if (key == "run.consistency_seeds") consistency_seeds = parse_u64_list(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    for_each_kv(text, [&cfg](const std::string& k, const std::string& v) { cfg.apply_kv(k, v); });
}

RunConfig parse_run_config(const std::string& path) {
    RunConfig cfg;
    apply_config_text(cfg, read_file(path));
    return cfg;
}

EncoderConfig parse_encoder_config(const std::string& path) {
    EncoderConfig cfg;
    for_each_kv(read_file(path), [&cfg](const std::string& key, const std::string& value) {
        if (key == "encoder.image_size") cfg.image_size = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.patch_size") cfg.patch_size = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.channels") cfg.channels = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.num_layers") cfg.num_layers = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.hidden_dim") cfg.hidden_dim = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.num_heads") cfg.num_heads = static_cast<std::size_t>(parse_u64(key, value));
        else if (key == "encoder.mlp_ratio") cfg.mlp_ratio = parse_double(key, value);
        else if (key == "encoder.include_cls") cfg.include_cls = parse_bool(key, value);
        else throw ConfigError("config: unknown key '" + key + "'");
    });
    cfg.validate();
    return cfg;
}

}  // namespace uvet
