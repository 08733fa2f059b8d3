#include "uvet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace uvet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are raw little-endian doubles");

namespace {

constexpr char kMagic[5] = {'U', 'V', 'E', 'T', '1'};

struct Entry {
    std::string name;
    const Tensor* tensor;  // save side
    Shape shape;           // load side
};

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("checkpoint: truncated table");
    return v;
}

// fixed traversal order shared by save and load
template <class Fn>
void for_each_entry(const EncoderConfig& c, Fn&& fn) {
    fn("patch_embed.weight", Shape{c.patch_dim(), c.hidden_dim});
    fn("patch_embed.bias", Shape{1, c.hidden_dim});
    fn("pos_embed", Shape{c.num_tokens(), c.hidden_dim});
    if (c.include_cls) fn("cls_embed", Shape{1, c.hidden_dim});
    const std::size_t d = c.hidden_dim, mh = c.mlp_hidden();
    for (std::size_t t = 0; t < c.num_layers; ++t) {
        const std::string p = "layers." + std::to_string(t) + ".";
        fn(p + "ln1.gain", Shape{1, d});
        fn(p + "ln1.bias", Shape{1, d});
        fn(p + "attn.wq", Shape{d, d});
        fn(p + "attn.bq", Shape{1, d});
        fn(p + "attn.wk", Shape{d, d});
        fn(p + "attn.bk", Shape{1, d});
        fn(p + "attn.wv", Shape{d, d});
        fn(p + "attn.bv", Shape{1, d});
        fn(p + "attn.wo", Shape{d, d});
        fn(p + "attn.bo", Shape{1, d});
        fn(p + "ln2.gain", Shape{1, d});
        fn(p + "ln2.bias", Shape{1, d});
        fn(p + "mlp.w1", Shape{d, mh});
        fn(p + "mlp.b1", Shape{1, mh});
        fn(p + "mlp.w2", Shape{mh, d});
        fn(p + "mlp.b2", Shape{1, d});
    }
}

Tensor* tensor_by_name(EncoderParams& p, const EncoderConfig& c, const std::string& name) {
    if (name == "patch_embed.weight") return &p.patch_weight;
    if (name == "patch_embed.bias") return &p.patch_bias;
    if (name == "pos_embed") return &p.pos_embed;
    if (name == "cls_embed") return &p.cls_embed;
    for (std::size_t t = 0; t < c.num_layers; ++t) {
        const std::string pre = "layers." + std::to_string(t) + ".";
        if (name.rfind(pre, 0) != 0) continue;
        LayerParams& l = p.layers[t];
        const std::string f = name.substr(pre.size());
        if (f == "ln1.gain") return &l.ln1_gain;
        if (f == "ln1.bias") return &l.ln1_bias;
        if (f == "attn.wq") return &l.wq;
        if (f == "attn.bq") return &l.bq;
        if (f == "attn.wk") return &l.wk;
        if (f == "attn.bk") return &l.bk;
        if (f == "attn.wv") return &l.wv;
        if (f == "attn.bv") return &l.bv;
        if (f == "attn.wo") return &l.wo;
        if (f == "attn.bo") return &l.bo;
        if (f == "ln2.gain") return &l.ln2_gain;
        if (f == "ln2.bias") return &l.ln2_bias;
        if (f == "mlp.w1") return &l.w1;
        if (f == "mlp.b1") return &l.b1;
        if (f == "mlp.w2") return &l.w2;
        if (f == "mlp.b2") return &l.b2;
    }
    return nullptr;
}

std::vector<std::pair<std::string, double>> config_entries(const EncoderConfig& c) {
    return {
        {"config.image_size", static_cast<double>(c.image_size)},
        {"config.patch_size", static_cast<double>(c.patch_size)},
        {"config.channels", static_cast<double>(c.channels)},
        {"config.num_layers", static_cast<double>(c.num_layers)},
        {"config.hidden_dim", static_cast<double>(c.hidden_dim)},
        {"config.num_heads", static_cast<double>(c.num_heads)},
        {"config.mlp_ratio", c.mlp_ratio},
        {"config.include_cls", c.include_cls ? 1.0 : 0.0},
    };
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderConfig& config,
                     const EncoderParams& params) {
    config.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);

    const auto cfg = config_entries(config);
    std::vector<std::pair<std::string, const Tensor*>> table;
    std::vector<Tensor> cfg_tensors;
    cfg_tensors.reserve(cfg.size());
    for (const auto& [name, v] : cfg) {
        cfg_tensors.push_back(Tensor::scalar(v));
        table.emplace_back(name, &cfg_tensors.back());
    }
    EncoderParams& p = const_cast<EncoderParams&>(params);
    for_each_entry(config, [&](const std::string& name, const Shape& shape) {
        const Tensor* t = tensor_by_name(p, config, name);
        if (t == nullptr || t->shape() != shape) {
            throw DimensionError("checkpoint: parameter " + name + " has shape " +
                                 (t ? shape_str(t->shape()) : std::string("<missing>")) +
                                 ", expected " + shape_str(shape));
        }
        table.emplace_back(name, t);
    });

    out.write(kMagic, sizeof kMagic);
    write_u32(out, static_cast<std::uint32_t>(table.size()));
    for (const auto& [name, t] : table) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(0);  // dtype 0 = f64
        write_u32(out, static_cast<std::uint32_t>(t->ndim()));
        for (std::size_t d : t->shape()) write_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& [name, t] : table) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw IoError("short write: " + path);
}

std::pair<EncoderConfig, EncoderParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);

    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw FormatError("checkpoint: bad magic in " + path);
    }

    const std::uint32_t count = read_u32(in);
    std::vector<Entry> table(count);
    for (Entry& e : table) {
        const std::uint32_t name_len = read_u32(in);
        if (name_len > 4096) throw FormatError("checkpoint: implausible name length");
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        const int dtype = in.get();
        if (dtype != 0) throw FormatError("checkpoint: unsupported dtype for " + e.name);
        const std::uint32_t ndim = read_u32(in);
        if (ndim > 8) throw FormatError("checkpoint: implausible rank for " + e.name);
        e.shape.resize(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i) e.shape[i] = read_u32(in);
        if (!in) throw FormatError("checkpoint: truncated table");
    }

    auto read_payload = [&in](const Entry& e) {
        Tensor t(e.shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw FormatError("checkpoint: truncated payload for " + e.name);
        return t;
    };

    // config scalars lead the table
    EncoderConfig config;
    std::size_t i = 0;
    std::vector<std::pair<std::string, double>> cfg;
    for (; i < table.size() && table[i].name.rfind("config.", 0) == 0; ++i) {
        cfg.emplace_back(table[i].name, read_payload(table[i]).scalar_value());
    }
    for (const auto& [name, v] : cfg) {
        if (name == "config.image_size") config.image_size = static_cast<std::size_t>(v);
        else if (name == "config.patch_size") config.patch_size = static_cast<std::size_t>(v);
        else if (name == "config.channels") config.channels = static_cast<std::size_t>(v);
        else if (name == "config.num_layers") config.num_layers = static_cast<std::size_t>(v);
        else if (name == "config.hidden_dim") config.hidden_dim = static_cast<std::size_t>(v);
        else if (name == "config.num_heads") config.num_heads = static_cast<std::size_t>(v);
        else if (name == "config.mlp_ratio") config.mlp_ratio = v;
        else if (name == "config.include_cls") config.include_cls = v != 0.0;
        else throw FormatError("checkpoint: unknown config entry " + name);
    }
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: invalid embedded config: ") + e.what());
    }

    EncoderParams params;
    params.layers.resize(config.num_layers);
    std::size_t expected = 0;
    for_each_entry(config, [&](const std::string&, const Shape&) { ++expected; });
    if (table.size() - i != expected) {
        throw FormatError("checkpoint: expected " + std::to_string(expected) + " parameter entries, got " +
                          std::to_string(table.size() - i));
    }
    for_each_entry(config, [&](const std::string& name, const Shape& shape) {
        const Entry& e = table[i++];
        if (e.name != name) throw FormatError("checkpoint: expected entry " + name + ", got " + e.name);
        if (e.shape != shape) {
            throw FormatError("checkpoint: entry " + name + " has shape " + shape_str(e.shape) +
                              ", expected " + shape_str(shape));
        }
        *tensor_by_name(params, config, name) = read_payload(e);
    });
    return {config, std::move(params)};
}

}  // namespace uvet
