#include "sedepth/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "sedepth/image_io.hpp"
#include "sedepth/nn_common.hpp"

namespace sedepth {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kFooterSize = 64;

class Writer {
public:
    template <typename T>
    void pod(T value) {
        buf_.append(reinterpret_cast<const char*>(&value), sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_ += s;
    }
    void tensor(const NamedTensor& nt) {
        str(nt.first);
        auto t = nt.second.detach().contiguous().cpu();
        pod<std::int8_t>(static_cast<std::int8_t>(t.scalar_type()));
        pod<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) {
            pod<std::int64_t>(d);
        }
        const auto nbytes = t.numel() * static_cast<std::int64_t>(t.element_size());
        pod<std::uint64_t>(static_cast<std::uint64_t>(nbytes));
        buf_.append(static_cast<const char*>(t.data_ptr()), static_cast<std::size_t>(nbytes));
    }
    void tensors(const std::vector<NamedTensor>& list) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
        for (const auto& nt : list) {
            tensor(nt);
        }
    }
    std::string& bytes() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    NamedTensor tensor() {
        auto name = str();
        const auto type = static_cast<c10::ScalarType>(pod<std::int8_t>());
        if (type != torch::kFloat32 && type != torch::kFloat64 && type != torch::kInt64) {
            throw DataError("checkpoint tensor '" + name + "' has unsupported dtype");
        }
        const auto ndim = pod<std::uint32_t>();
        if (ndim > 8) {
            throw DataError("checkpoint tensor '" + name + "' is corrupt");
        }
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) {
            d = pod<std::int64_t>();
            if (d < 0) {
                throw DataError("checkpoint tensor '" + name + "' is corrupt");
            }
        }
        auto t = torch::empty(shape, torch::TensorOptions().dtype(type));
        const auto nbytes = pod<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size()) {
            throw DataError("checkpoint tensor '" + name + "' size disagrees with its shape");
        }
        need(nbytes);
        std::memcpy(t.data_ptr(), buf_.data() + pos_, nbytes);
        pos_ += nbytes;
        return {std::move(name), std::move(t)};
    }
    std::vector<NamedTensor> tensors() {
        const auto n = pod<std::uint32_t>();
        std::vector<NamedTensor> out;
        for (std::uint32_t i = 0; i < n; ++i) {
            out.push_back(tensor());
        }
        return out;
    }
    bool done() const { return pos_ == end_; }

private:
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;

    void need(std::size_t n) const {
        if (n > end_ - pos_) {
            throw DataError("checkpoint is truncated");
        }
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    Writer w;
    w.bytes().append(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.str(format_kv(ckpt.model.to_kv()));
    w.pod<std::uint64_t>(ckpt.seed);
    w.str(format_kv(ckpt.trainer));

    const auto& s = ckpt.state;
    w.pod<std::int64_t>(s.step);
    w.pod<std::int64_t>(s.epoch);
    w.pod<std::int64_t>(s.cursor);
    w.str(s.rng_state);
    w.pod<double>(s.best_metric);
    w.pod<std::int64_t>(s.best_step);

    w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.groups.size()));
    for (const auto& [name, params] : ckpt.groups) {
        w.str(name);
        w.str(parameter_digest(params));
        w.tensors(params);
    }
    w.pod<std::int64_t>(ckpt.optimizer_step);
    w.tensors(ckpt.exp_avg);
    w.tensors(ckpt.exp_avg_sq);

    auto& bytes = w.bytes();
    bytes += sha256_hex(bytes.data(), bytes.size());
    write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < sizeof(kMagic) + sizeof(std::uint32_t) + kFooterSize ||
        std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a checkpoint file (or truncated): " + path.string());
    }
    const auto body = buf.size() - kFooterSize;
    if (sha256_hex(buf.data(), body) != buf.substr(body)) {
        throw DataError("checkpoint checksum mismatch (truncated or corrupt): " + path.string());
    }

    Reader r(buf, body);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) {
        r.pod<char>();
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.model = ModelConfig::from_kv(parse_kv_text(r.str()));
    ckpt.seed = r.pod<std::uint64_t>();
    ckpt.trainer = parse_kv_text(r.str());

    auto& s = ckpt.state;
    s.step = r.pod<std::int64_t>();
    s.epoch = r.pod<std::int64_t>();
    s.cursor = r.pod<std::int64_t>();
    s.rng_state = r.str();
    s.best_metric = r.pod<double>();
    s.best_step = r.pod<std::int64_t>();

    const auto n_groups = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_groups; ++i) {
        auto name = r.str();
        auto digest = r.str();
        auto params = r.tensors();
        if (parameter_digest(params) != digest) {
            throw DataError("checkpoint group '" + name + "' does not match its recorded digest");
        }
        s.group_digests[name] = digest;
        ckpt.groups[name] = std::move(params);
    }
    ckpt.optimizer_step = r.pod<std::int64_t>();
    ckpt.exp_avg = r.tensors();
    ckpt.exp_avg_sq = r.tensors();
    if (!r.done()) {
        throw DataError("checkpoint has trailing bytes: " + path.string());
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    auto ckpt = load_checkpoint(path);
    if (const auto field = ckpt.model.first_mismatch(expected)) {
        throw ConfigError(*field, "value differs from the checkpoint config");
    }
    return ckpt;
}

}  // namespace sedepth
