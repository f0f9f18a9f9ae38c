#include "msca/checkpoint.hpp"

#include <cstring>
#include <map>
#include <sstream>

#include "msca/tensor_io.hpp"

namespace msca {

namespace {

constexpr const char* kMagic = "MSCACKPT";

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

void append_group(std::vector<std::uint8_t>& out, const std::string& prefix,
                  const std::vector<std::pair<std::string, Tensor>>& group) {
    for (const auto& [name, t] : group) {
        const std::string full = prefix + name;
        put_u32(out, static_cast<std::uint32_t>(full.size()));
        out.insert(out.end(), full.begin(), full.end());
        const auto blob = encode_tensor(t, DType::F64);
        out.insert(out.end(), blob.begin(), blob.end());
    }
}

Tensor copy_of(const Tensor& t) { return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end())); }

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ostringstream h;
    h << kMagic << " " << kCheckpointVersion << "\n"
      << "epoch=" << c.epoch << "\n"
      << "adam_steps=" << c.adam_steps << "\n"
      << "best_val_dice=" << fmt(c.best_val_dice) << "\n"
      << "best_epoch=" << c.best_epoch << "\n"
      << "data=" << c.data << "\n"
      << "rng=" << c.rng_state << "\n"
      << "tensors=" << c.params.size() + c.adam_m.size() + c.adam_v.size() << "\n"
      << "[config]\n"
      << c.config.to_text() << "end\n";
    const std::string header = h.str();
    std::vector<std::uint8_t> out(header.begin(), header.end());
    append_group(out, "param:", c.params);
    append_group(out, "adam.m:", c.adam_m);
    append_group(out, "adam.v:", c.adam_v);
    // Write to a sibling and rename so a crash never leaves a torn checkpoint.
    const std::string tmp = path + ".tmp";
    write_file(tmp, out);
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    auto next_line = [&]() {
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        if (pos >= bytes.size()) throw FormatError("truncated checkpoint header", start);
        std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
        ++pos;
        return line;
    };
    const std::string first = next_line();
    const std::string expect = std::string(kMagic) + " ";
    if (first.rfind(expect, 0) != 0) throw FormatError("not a checkpoint file: " + path, 0);
    const std::string version = first.substr(expect.size());
    if (version != std::to_string(kCheckpointVersion)) {
        throw FormatError("checkpoint version " + version + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          expect.size());
    }
    Checkpoint c;
    std::size_t tensors = 0;
    std::map<std::string, std::string> kv;
    for (std::string line = next_line(); line != "[config]"; line = next_line()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("bad checkpoint header line", pos);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    std::string cfg_text;
    for (std::string line = next_line(); line != "end"; line = next_line()) cfg_text += line + "\n";
    try {
        c.epoch = std::stoi(kv.at("epoch"));
        c.adam_steps = std::stoll(kv.at("adam_steps"));
        c.best_val_dice = std::stod(kv.at("best_val_dice"));
        c.best_epoch = std::stoi(kv.at("best_epoch"));
        c.rng_state = kv.at("rng");
        if (auto it = kv.find("data"); it != kv.end()) c.data = it->second;
        tensors = std::stoull(kv.at("tensors"));
    } catch (const std::logic_error&) {
        throw FormatError("checkpoint header is missing or has malformed fields", 0);
    }
    c.config = ModelConfig::from_text(cfg_text);

    for (std::size_t i = 0; i < tensors; ++i) {
        if (bytes.size() - pos < 4) throw FormatError("truncated checkpoint tensor name", pos);
        std::uint32_t len;
        std::memcpy(&len, bytes.data() + pos, 4);
        pos += 4;
        if (bytes.size() - pos < len) throw FormatError("truncated checkpoint tensor name", pos);
        std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        std::size_t used = 0;
        Tensor t = decode_tensor(std::span(bytes).subspan(pos), pos, &used);
        pos += used;
        const auto colon = name.find(':');
        const std::string group = name.substr(0, colon), key = name.substr(colon + 1);
        if (group == "param") c.params.emplace_back(key, t);
        else if (group == "adam.m") c.adam_m.emplace_back(key, t);
        else if (group == "adam.v") c.adam_v.emplace_back(key, t);
        else throw FormatError("unknown checkpoint tensor group in " + name, pos);
    }
    if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint tensors", pos);
    return c;
}

Checkpoint capture(const Model& model, const AdamW* optimizer) {
    Checkpoint c;
    c.config = model.config();
    for (const auto& p : model.parameters()) c.params.emplace_back(p.name, copy_of(p.tensor));
    if (optimizer) {
        c.adam_steps = optimizer->steps();
        for (const auto& s : optimizer->slots()) {
            c.adam_m.emplace_back(s.name, Tensor(s.param.shape(), s.m));
            c.adam_v.emplace_back(s.name, Tensor(s.param.shape(), s.v));
        }
    }
    return c;
}

void restore_parameters(Model& model, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt.params) by_name[name] = &t;
    for (auto& p : model.parameters()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw ValidationError("checkpoint is missing parameter " + p.name);
        const Tensor& src = *it->second;
        if (src.shape() != p.tensor.shape()) {
            throw ValidationError("shape mismatch for " + p.name + ": checkpoint " + shape_str(src.shape()) +
                                  " vs model " + shape_str(p.tensor.shape()));
        }
        Tensor dst = p.tensor;
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

void restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt) {
    std::map<std::string, std::pair<const Tensor*, const Tensor*>> by_name;
    for (const auto& [name, t] : ckpt.adam_m) by_name[name].first = &t;
    for (const auto& [name, t] : ckpt.adam_v) by_name[name].second = &t;
    for (auto& s : optimizer.slots()) {
        auto it = by_name.find(s.name);
        if (it == by_name.end() || !it->second.first || !it->second.second) {
            throw ValidationError("checkpoint is missing optimizer state for " + s.name);
        }
        const auto& [m, v] = it->second;
        if (m->shape() != s.param.shape() || v->shape() != s.param.shape()) {
            throw ValidationError("optimizer state shape mismatch for " + s.name);
        }
        s.m.assign(m->data().begin(), m->data().end());
        s.v.assign(v->data().begin(), v->data().end());
    }
    optimizer.set_steps(ckpt.adam_steps);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model(ckpt.config);
    restore_parameters(model, ckpt);
    return model;
}

}  // namespace msca
