#include "fairtune/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "fairtune/io.hpp"

namespace fairtune::nnet {

namespace {

constexpr char kMagic[8] = {'F', 'T', 'C', 'K', 'P', 'T', '\0', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view b) : bytes_(b) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::Schema, "checkpoint truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json net_config_to_json(const NetConfig& c) {
    return {{"patch_len", c.patch_len},         {"d_model", c.d_model},
            {"n_layers", c.n_layers},           {"n_heads", c.n_heads},
            {"ffn_dim", c.ffn_dim},             {"context_patches", c.context_patches},
            {"size_class", size_class_name(c.size_class)},
            {"recon_weight", c.recon_weight},   {"hr_center", c.hr_center},
            {"hr_scale", c.hr_scale}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
    NetConfig c;
    try {
        c.patch_len = j.at("patch_len").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.ffn_dim = j.at("ffn_dim").get<int>();
        c.context_patches = j.at("context_patches").get<int>();
        c.size_class = parse_size_class(j.at("size_class").get<std::string>());
        c.recon_weight = j.at("recon_weight").get<double>();
        c.hr_center = j.at("hr_center").get<double>();
        c.hr_scale = j.at("hr_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("net config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string serialize_checkpoint(const TinyPpgNet& net, const nlohmann::json& mitigation,
                                 const nlohmann::json& meta) {
    const nlohmann::json header{
        {"net_config", net_config_to_json(net.config)}, {"mitigation", mitigation}, {"meta", meta}};
    const std::string h = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, h.size());
    out += h;
    const auto tensors = named_tensors(net.params);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, 2);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value->rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value->cols()));
        out.append(reinterpret_cast<const char*>(t.value->data()),
                   sizeof(double) * static_cast<std::size_t>(t.value->size()));
    }
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
        fail(ErrorKind::Schema, "not a checkpoint (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) fail(ErrorKind::Schema, "unsupported checkpoint version " + std::to_string(version));
    const auto hlen = r.get<std::uint64_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.take(hlen));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Schema, std::string("checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    ck.net = init_net(net_config_from_json(header.at("net_config")), 0);
    ck.mitigation = header.value("mitigation", nlohmann::json());
    ck.meta = header.value("meta", nlohmann::json::object());

    auto tensors = named_tensors(ck.net.params);
    const auto count = r.get<std::uint32_t>();
    if (count != tensors.size()) fail(ErrorKind::Schema, "checkpoint tensor count does not match its config");
    for (auto& t : tensors) {
        const auto nlen = r.get<std::uint32_t>();
        const auto name = r.take(nlen);
        if (name != t.name) fail(ErrorKind::Schema, "checkpoint tensor \"" + std::string(name) + "\" unexpected");
        const auto rank = r.get<std::uint32_t>();
        if (rank != 2) fail(ErrorKind::Schema, "checkpoint tensor rank must be 2");
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (rows != static_cast<std::uint64_t>(t.value->rows()) || cols != static_cast<std::uint64_t>(t.value->cols())) {
            fail(ErrorKind::Schema, "checkpoint tensor " + t.name + " has the wrong shape");
        }
        const auto data = r.take(sizeof(double) * rows * cols);
        std::memcpy(t.value->data(), data.data(), data.size());
    }
    if (!r.done()) fail(ErrorKind::Schema, "trailing bytes after checkpoint tensors");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TinyPpgNet& net, const nlohmann::json& mitigation,
                     const nlohmann::json& meta) {
    io::write_file_atomic(path, serialize_checkpoint(net, mitigation, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(io::read_file(path)); }

}  // namespace fairtune::nnet
