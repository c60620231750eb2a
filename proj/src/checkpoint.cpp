#include "qpnet/checkpoint.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace qpnet {

namespace {

class Writer {
public:
    std::vector<std::uint8_t> bytes;

    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    void tensor(const Tensor<float>& t) {
        u32(static_cast<std::uint32_t>(t.rows()));
        u32(static_cast<std::uint32_t>(t.cols()));
        for (float v : t.flat()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            u32(bits);
        }
    }
};

class Reader {
public:
    Reader(const std::uint8_t* d, std::size_t n) : d_(d), n_(n) {}

    std::size_t remaining() const { return n_ - pos_; }
    void need(std::size_t k) const {
        if (remaining() < k) throw std::runtime_error("checkpoint: truncated");
    }
    std::uint8_t u8() {
        need(1);
        return d_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(d_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(d_[pos_++]) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(d_ + pos_), n);
        pos_ += n;
        return s;
    }
    void tensor_into(Tensor<float>& t, const std::string& name) {
        const std::uint32_t r = u32(), c = u32();
        if (r != t.rows() || c != t.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name + " (" + std::to_string(r) + "x" +
                                     std::to_string(c) + " vs " + std::to_string(t.rows()) + "x" +
                                     std::to_string(t.cols()) + ")");
        need(t.size() * 4);
        for (float& v : t.flat()) {
            const std::uint32_t bits = u32();
            std::memcpy(&v, &bits, 4);
        }
    }

private:
    const std::uint8_t* d_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

AdamState make_adam_state(const ModelParams<float>& p) {
    AdamState s;
    for (const Tensor<float>* t : p.trainable()) {
        s.m.emplace_back(t->rows(), t->cols());
        s.v.emplace_back(t->rows(), t->cols());
    }
    return s;
}

std::string net_config_text(const NetConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "[net]\n"
       << "preset = " << cfg.preset << "\n"
       << "fixed_layers = " << cfg.fixed_layers << "\n"
       << "fixed_repeats = " << cfg.fixed_repeats << "\n"
       << "adaptive_layers = " << cfg.adaptive_layers << "\n"
       << "adaptive_repeats = " << cfg.adaptive_repeats << "\n"
       << "residual_channels = " << cfg.residual_channels << "\n"
       << "skip_channels = " << cfg.skip_channels << "\n"
       << "a = " << cfg.a << "\n"
       << "sample_rate = " << cfg.sample_rate << "\n"
       << "aux_dim = " << cfg.aux_dim << "\n"
       << "f0_floor = " << cfg.f0_floor << "\n"
       << "f0_ceil = " << cfg.f0_ceil << "\n";
    return os.str();
}

NetConfig parse_net_config_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::runtime_error(std::string("checkpoint: bad config text: ") + e.what());
    }
    NetConfig c;
    try {
        c.preset = tree.get<std::string>("net.preset");
        c.fixed_layers = tree.get<int>("net.fixed_layers");
        c.fixed_repeats = tree.get<int>("net.fixed_repeats");
        c.adaptive_layers = tree.get<int>("net.adaptive_layers");
        c.adaptive_repeats = tree.get<int>("net.adaptive_repeats");
        c.residual_channels = tree.get<int>("net.residual_channels");
        c.skip_channels = tree.get<int>("net.skip_channels");
        c.a = tree.get<int>("net.a");
        c.sample_rate = tree.get<int>("net.sample_rate");
        c.aux_dim = tree.get<int>("net.aux_dim");
        c.f0_floor = tree.get<double>("net.f0_floor");
        c.f0_ceil = tree.get<double>("net.f0_ceil");
    } catch (const pt::ptree_error& e) {
        throw std::runtime_error(std::string("checkpoint: incomplete config text: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<std::uint8_t> checkpoint_bytes(const ModelParams<float>& p, const AdamState* opt) {
    Writer w;
    w.raw("QPW1", 4);
    const std::string text = net_config_text(p.config);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.raw(text.data(), text.size());
    const auto tensors = p.named_tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) w.tensor(*t);
    w.u8(opt ? 1 : 0);
    if (opt) {
        const auto n = p.trainable().size();
        if (opt->m.size() != n || opt->v.size() != n)
            throw std::invalid_argument("checkpoint: optimizer state does not match the model");
        w.u64(opt->step);
        for (const auto& t : opt->m) w.tensor(t);
        for (const auto& t : opt->v) w.tensor(t);
    }
    w.u64(fnv1a64(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 8 || std::memcmp(bytes.data(), "QPW1", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const std::size_t body = bytes.size() - 8;
    Reader tail(bytes.data() + body, 8);
    if (tail.u64() != fnv1a64(bytes.data(), body)) throw std::runtime_error("checkpoint: checksum mismatch");

    Reader r(bytes.data() + 4, body - 4);
    const std::uint32_t text_len = r.u32();
    Checkpoint ck;
    ck.params = zero_params<float>(parse_net_config_text(r.str(text_len)));
    auto tensors = ck.params.named_tensors();
    const std::uint32_t count = r.u32();
    if (count != tensors.size())
        throw std::runtime_error("checkpoint: expected " + std::to_string(tensors.size()) + " tensors, found " +
                                 std::to_string(count));
    for (auto& [name, t] : tensors) r.tensor_into(*t, name);
    if (r.u8()) {
        AdamState s = make_adam_state(ck.params);
        s.step = r.u64();
        for (std::size_t i = 0; i < s.m.size(); ++i) r.tensor_into(s.m[i], "adam.m" + std::to_string(i));
        for (std::size_t i = 0; i < s.v.size(); ++i) r.tensor_into(s.v[i], "adam.v" + std::to_string(i));
        ck.optimizer = std::move(s);
    }
    if (r.remaining() != 0) throw std::runtime_error("checkpoint: trailing bytes");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& p, const AdamState* opt) {
    const auto bytes = checkpoint_bytes(p, opt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return parse_checkpoint(bytes);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace qpnet
