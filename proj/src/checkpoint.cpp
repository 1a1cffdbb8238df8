#include "kmdx/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "kmdx/serde.hpp"

namespace kmdx {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'K', 'M', 'D', 'X', 'C', 'K', 'P', 'T'};

struct RecordOut {
    std::string name;
    std::string dtype;  // "f32" | "f64"
    Shape shape;
    const std::vector<double>* data;
};

class ContainerWriter {
 public:
    void add(std::string name, std::string dtype, Shape shape,
             const std::vector<double>& data) {
        records_.push_back(
            {std::move(name), std::move(dtype), std::move(shape), &data});
    }

    void write(const std::string& path, json header) const {
        json index = json::array();
        for (const auto& r : records_)
            index.push_back(
                {{"name", r.name}, {"dtype", r.dtype}, {"shape", r.shape}});
        header["records"] = std::move(index);
        const std::string head = header.dump();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path);
        out.write(kMagic, 8);
        const std::uint32_t version = kCheckpointFormatVersion;
        out.write(reinterpret_cast<const char*>(&version), 4);
        const std::uint64_t head_len = head.size();
        out.write(reinterpret_cast<const char*>(&head_len), 8);
        out.write(head.data(), static_cast<std::streamsize>(head.size()));
        for (const auto& r : records_) {
            if (r.dtype == "f32") {
                std::vector<float> buf(r.data->begin(), r.data->end());
                out.write(reinterpret_cast<const char*>(buf.data()),
                          static_cast<std::streamsize>(buf.size() * 4));
            } else {
                out.write(reinterpret_cast<const char*>(r.data->data()),
                          static_cast<std::streamsize>(r.data->size() * 8));
            }
        }
        if (!out) throw IoError("short write on checkpoint " + path);
    }

 private:
    std::vector<RecordOut> records_;
};

struct LoadedContainer {
    json header;
    std::map<std::string, std::vector<double>> records;
};

LoadedContainer read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path + " is not a checkpoint container");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointFormatVersion)
        throw IoError("checkpoint " + path + " has format version " +
                      std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointFormatVersion));
    std::uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), 8);
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    LoadedContainer c;
    c.header = json::parse(head, nullptr, false);
    if (c.header.is_discarded())
        throw IoError("checkpoint " + path + " header is not valid JSON");
    for (const auto& r : c.header.at("records")) {
        const std::string name = r.at("name").get<std::string>();
        const std::string dtype = r.at("dtype").get<std::string>();
        Shape shape = r.at("shape").get<Shape>();
        const size_t n = static_cast<size_t>(shape_numel(shape));
        std::vector<double> data(n);
        if (dtype == "f32") {
            std::vector<float> buf(n);
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(n * 4));
            for (size_t i = 0; i < n; ++i) data[i] = buf[i];
        } else {
            in.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(n * 8));
        }
        c.records[name] = std::move(data);
    }
    if (!in) throw IoError("checkpoint " + path + " is truncated");
    return c;
}

json queue_meta(const FeatureQueue& q) {
    return {{"dim", q.dim()},
            {"size", q.size()},
            {"cursor", q.cursor()},
            {"capacity", q.capacity()}};
}

void restore_queue(FeatureQueue& q, const json& meta,
                   const std::vector<double>& rows) {
    q.restore(meta.at("dim"), meta.at("size"), meta.at("cursor"), rows);
}

}  // namespace

void save_checkpoint(const std::string& path, const Trainer& trainer) {
    ContainerWriter w;
    // Registry walk needs mutable refs; the trainer itself is not modified.
    Trainer& t = const_cast<Trainer&>(trainer);
    ParamRefs params = t.model.params();
    for (const auto& [name, p] : params)
        w.add(name, "f32", p->shape(), p->data());
    for (size_t i = 0; i < params.size(); ++i) {
        w.add("adam.m." + params[i].first, "f64", params[i].second->shape(),
              t.optimizer.m()[i]);
        w.add("adam.v." + params[i].first, "f64", params[i].second->shape(),
              t.optimizer.v()[i]);
    }
    for (const auto& s : t.momentum.pair.shadow)
        w.add(s.name(), "f64", s.shape(), s.data());

    json header;
    header["model"] = to_json(t.model.cfg);
    header["memory"] = to_json(t.model.mcfg);
    header["ablation"] = to_json(t.model.abl);
    header["train"] = to_json(t.cfg);
    header["vocab"] = t.vocab.tokens();
    header["step"] = t.global_step;
    header["epoch"] = t.epoch;
    header["adam_t"] = t.optimizer.step_count();

    header["queues"] = {{"image", queue_meta(t.queue_image)},
                        {"text", queue_meta(t.queue_text)},
                        {"data", queue_meta(t.queue_data)},
                        {"knowledge", queue_meta(t.queue_knowledge)}};
    const std::vector<std::pair<std::string, FeatureQueue*>> queues = {
        {"image", &t.queue_image},
        {"text", &t.queue_text},
        {"data", &t.queue_data},
        {"knowledge", &t.queue_knowledge}};
    for (const auto& [name, q] : queues)
        if (q->dim() > 0)
            w.add("queue." + name + ".rows", "f64",
                  {q->capacity(), q->dim()}, q->raw());

    if (t.model.memory.has_value()) {
        MemoryStack& mem = *t.model.memory;
        header["mem_push_counter"] = mem.push_counter;
        json layers_meta = json::array();
        for (size_t l = 0; l < mem.layers.size(); ++l) {
            json heads_meta = json::array();
            for (size_t h = 0; h < mem.layers[l].banks.size(); ++h) {
                const std::string base = "mem.layer" + std::to_string(l) +
                                         ".head" + std::to_string(h);
                const auto& proto = mem.layers[l].protos[h];
                json hmeta = {{"proto_count", proto.count},
                              {"proto_dim", proto.dim},
                              {"built_epoch", proto.built_epoch},
                              {"built_batch", proto.built_batch}};
                if (proto.count > 0) {
                    w.add(base + ".proto_keys", "f64",
                          {proto.count, proto.dim}, proto.keys);
                    w.add(base + ".proto_values", "f64",
                          {proto.count, proto.dim}, proto.values);
                }
                json entries = json::array();
                int e = 0;
                for (const auto& entry : mem.layers[l].banks[h].entries()) {
                    entries.push_back({{"iteration", entry.iteration},
                                       {"rows", entry.rows},
                                       {"dim", entry.dim}});
                    w.add(base + ".bank" + std::to_string(e) + ".keys", "f64",
                          {entry.rows, entry.dim}, entry.keys);
                    w.add(base + ".bank" + std::to_string(e) + ".values",
                          "f64", {entry.rows, entry.dim}, entry.values);
                    ++e;
                }
                hmeta["bank"] = std::move(entries);
                heads_meta.push_back(std::move(hmeta));
            }
            layers_meta.push_back(std::move(heads_meta));
        }
        header["memory_state"] = std::move(layers_meta);
    }
    w.write(path, std::move(header));
}

Trainer load_checkpoint(const std::string& path) {
    LoadedContainer c = read_container(path);
    const json& header = c.header;

    ModelConfig cfg = model_config_from_json(header.at("model"));
    MemoryConfig mcfg = memory_config_from_json(header.at("memory"));
    Ablation abl = ablation_from_json(header.at("ablation"));
    TrainConfig tcfg = train_config_from_json(header.at("train"));
    Vocab vocab =
        Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());

    Model model = Model::init(cfg, mcfg, abl, tcfg.seed);
    Trainer trainer(std::move(model), tcfg, std::move(vocab));

    ParamRefs params = trainer.model.params();
    std::vector<std::vector<double>> adam_m, adam_v;
    for (const auto& [name, p] : params) {
        auto it = c.records.find(name);
        if (it == c.records.end())
            throw IoError("checkpoint missing parameter record " + name);
        if (it->second.size() != p->data().size())
            throw IoError("checkpoint record " + name + " has wrong size");
        p->mutable_data() = it->second;
        adam_m.push_back(c.records.at("adam.m." + name));
        adam_v.push_back(c.records.at("adam.v." + name));
    }
    trainer.optimizer.restore(header.at("adam_t").get<long long>(),
                              std::move(adam_m), std::move(adam_v));
    for (auto& shadow : trainer.momentum.pair.shadow) {
        auto it = c.records.find(shadow.name());
        if (it == c.records.end())
            throw IoError("checkpoint missing momentum record " +
                          shadow.name());
        shadow.mutable_data() = it->second;
    }
    trainer.global_step = header.at("step").get<long long>();
    trainer.epoch = header.at("epoch").get<long long>();

    const json& qmeta = header.at("queues");
    const std::vector<std::pair<std::string, FeatureQueue*>> queues = {
        {"image", &trainer.queue_image},
        {"text", &trainer.queue_text},
        {"data", &trainer.queue_data},
        {"knowledge", &trainer.queue_knowledge}};
    for (const auto& [name, q] : queues) {
        const json& m = qmeta.at(name);
        if (m.at("dim").get<int>() > 0)
            restore_queue(*q, m, c.records.at("queue." + name + ".rows"));
    }

    if (trainer.model.memory.has_value() && header.contains("memory_state")) {
        MemoryStack& mem = *trainer.model.memory;
        mem.push_counter = header.at("mem_push_counter").get<long long>();
        const json& layers_meta = header.at("memory_state");
        for (size_t l = 0; l < mem.layers.size(); ++l) {
            for (size_t h = 0; h < mem.layers[l].banks.size(); ++h) {
                const std::string base = "mem.layer" + std::to_string(l) +
                                         ".head" + std::to_string(h);
                const json& hmeta = layers_meta.at(l).at(h);
                PrototypeMemory& proto = mem.layers[l].protos[h];
                proto.count = hmeta.at("proto_count");
                proto.dim = hmeta.at("proto_dim");
                proto.built_epoch = hmeta.at("built_epoch");
                proto.built_batch = hmeta.at("built_batch");
                if (proto.count > 0) {
                    proto.keys = c.records.at(base + ".proto_keys");
                    proto.values = c.records.at(base + ".proto_values");
                }
                const json& entries = hmeta.at("bank");
                // stored newest-first; push oldest-first to rebuild
                for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
                    const size_t e = entries.size() - 1 -
                                     static_cast<size_t>(it - entries.rbegin());
                    KvBatch batch;
                    batch.iteration = (*it).at("iteration").get<long long>();
                    batch.rows = (*it).at("rows");
                    batch.dim = (*it).at("dim");
                    batch.keys =
                        c.records.at(base + ".bank" + std::to_string(e) +
                                     ".keys");
                    batch.values =
                        c.records.at(base + ".bank" + std::to_string(e) +
                                     ".values");
                    mem.layers[l].banks[h].push(std::move(batch));
                }
            }
        }
    }
    return trainer;
}

void dump_prototypes(const std::string& path, const MemoryStack& memory) {
    ContainerWriter w;
    json header;
    header["kind"] = "prototype-dump";
    for (size_t l = 0; l < memory.layers.size(); ++l)
        for (size_t h = 0; h < memory.layers[l].protos.size(); ++h) {
            const auto& proto = memory.layers[l].protos[h];
            if (proto.count == 0) continue;
            const std::string base = "mem.layer" + std::to_string(l) +
                                     ".head" + std::to_string(h);
            w.add(base + ".proto_keys", "f64", {proto.count, proto.dim},
                  proto.keys);
            w.add(base + ".proto_values", "f64", {proto.count, proto.dim},
                  proto.values);
        }
    w.write(path, std::move(header));
}

}  // namespace kmdx
