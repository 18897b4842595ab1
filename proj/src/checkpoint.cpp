#include "urbanln/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "urbanln/config.hpp"
#include "urbanln/jsonl.hpp"

namespace urbanln {

namespace {

constexpr char kMagic[8] = {'U', 'L', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

void put_tensor(std::string& buf, const std::string& name, const nn::Tensor& t) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    put_u32(buf, static_cast<std::uint32_t>(t.rows));
    put_u32(buf, static_cast<std::uint32_t>(t.cols));
    buf.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(double));
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    void expect_magic() {
        if (data_.size() < sizeof(kMagic) || std::memcmp(data_.data(), kMagic, sizeof(kMagic)) != 0) {
            throw StateError("checkpoint '" + path_ + "': bad magic or unsupported version");
        }
        pos_ = sizeof(kMagic);
    }

    std::uint32_t u32(const char* what) {
        if (pos_ + 4 > data_.size()) {
            throw StateError("checkpoint '" + path_ + "': unexpected EOF reading " +
                             std::string(what));
        }
        std::uint32_t v;
        std::memcpy(&v, data_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    std::string bytes(size_t n, const char* what) {
        if (pos_ + n > data_.size()) {
            throw StateError("checkpoint '" + path_ + "': unexpected EOF reading " +
                             std::string(what));
        }
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    nn::Tensor tensor(std::string* name_out) {
        const std::uint32_t name_len = u32("array name length");
        *name_out = bytes(name_len, "array name");
        const std::uint32_t rows = u32(("rows of '" + *name_out + "'").c_str());
        const std::uint32_t cols = u32(("cols of '" + *name_out + "'").c_str());
        const size_t n = static_cast<size_t>(rows) * cols;
        std::string raw = bytes(n * sizeof(double), ("data of '" + *name_out + "'").c_str());
        nn::Tensor t(static_cast<int>(rows), static_cast<int>(cols));
        std::memcpy(t.v.data(), raw.data(), raw.size());
        return t;
    }

    bool at_end() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const Trainer& trainer, const std::string& path) {
    json meta;
    meta["version"] = 1;
    meta["encoder"] = to_json(trainer.encoder_config());
    meta["ipsi"] = to_json(trainer.ipsi_config());
    meta["train"] = to_json(trainer.train_config());
    meta["step"] = trainer.step_count();
    meta["opt_steps"] = trainer.optimizer().steps();
    const std::string meta_str = meta.dump();

    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, static_cast<std::uint32_t>(meta_str.size()));
    buf.append(meta_str);

    std::uint32_t count = 0;
    std::string arrays;
    for (const auto& p : trainer.student().all()) {
        put_tensor(arrays, "s:" + p.name, p.value);
        ++count;
    }
    for (const auto& p : trainer.teacher().all()) {
        put_tensor(arrays, "t:" + p.name, p.value);
        ++count;
    }
    const auto& m = trainer.optimizer().first_moments();
    const auto& v = trainer.optimizer().second_moments();
    for (size_t i = 0; i < m.size(); ++i) {
        const std::string& name = trainer.student().all()[i].name;
        put_tensor(arrays, "am:" + name, m[i]);
        put_tensor(arrays, "av:" + name, v[i]);
        count += 2;
    }
    put_tensor(arrays, "queue.img", trainer.image_queue().snapshot());
    put_tensor(arrays, "queue.txt", trainer.text_queue().snapshot());
    count += 2;

    put_u32(buf, count);
    buf.append(arrays);
    write_text_atomic(path, buf);
}

std::unique_ptr<Trainer> load_checkpoint(const std::string& path) {
    Reader r(read_text_file(path), path);
    r.expect_magic();
    const std::uint32_t meta_len = r.u32("metadata length");
    json meta = parse_json(r.bytes(meta_len, "metadata"), "checkpoint metadata");
    if (meta.value("version", 0) != 1) {
        throw StateError("checkpoint '" + path + "': unsupported version " +
                         std::to_string(meta.value("version", 0)));
    }

    EncoderConfig enc_cfg = encoder_config_from_json(meta.at("encoder"));
    ipsi::IpsiConfig ipsi_cfg = ipsi_config_from_json(meta.at("ipsi"));
    TrainConfig train_cfg = train_config_from_json(meta.at("train"));
    auto trainer = std::make_unique<Trainer>(enc_cfg, ipsi_cfg, train_cfg);

    const std::uint32_t count = r.u32("array count");
    std::vector<nn::Tensor> adam_m, adam_v;
    bool have_queues = false;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name;
        nn::Tensor t = r.tensor(&name);
        if (name.rfind("s:", 0) == 0) {
            nn::Param& p = trainer->student().at(name.substr(2));
            if (!p.value.same_shape(t)) {
                throw StateError("checkpoint '" + path + "': shape mismatch on '" + name + "'");
            }
            p.value = std::move(t);
        } else if (name.rfind("t:", 0) == 0) {
            nn::Param& p = trainer->teacher().at(name.substr(2));
            if (!p.value.same_shape(t)) {
                throw StateError("checkpoint '" + path + "': shape mismatch on '" + name + "'");
            }
            p.value = std::move(t);
        } else if (name.rfind("am:", 0) == 0) {
            adam_m.push_back(std::move(t));
        } else if (name.rfind("av:", 0) == 0) {
            adam_v.push_back(std::move(t));
        } else if (name == "queue.img" || name == "queue.txt") {
            std::deque<std::vector<double>> entries;
            for (int row = 0; row < t.rows; ++row) {
                entries.emplace_back(t.row(row), t.row(row) + t.cols);
            }
            (name == "queue.img" ? trainer->image_queue() : trainer->text_queue())
                .restore(std::move(entries));
            have_queues = true;
        } else {
            throw StateError("checkpoint '" + path + "': unknown array '" + name + "'");
        }
    }
    if (!r.at_end()) {
        throw StateError("checkpoint '" + path + "': trailing bytes after last array");
    }
    if (!have_queues) {
        throw StateError("checkpoint '" + path + "': missing queue arrays");
    }
    if (!adam_m.empty() || meta.value("opt_steps", 0LL) > 0) {
        if (adam_m.size() != trainer->student().count() ||
            adam_v.size() != trainer->student().count()) {
            throw StateError("checkpoint '" + path + "': optimizer moment arrays incomplete");
        }
        trainer->optimizer().restore(std::move(adam_m), std::move(adam_v),
                                     meta.at("opt_steps").get<long long>());
    }
    trainer->restore_step(meta.at("step").get<long long>());
    return trainer;
}

} // namespace urbanln
