#include "amil/train.hpp"

#include <cstdio>
#include <fstream>

namespace amil {

std::string optimizer_name(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ContractError("unknown optimizer `" + name + "` (want sgd or adam)");
}

void write_metrics_csv(const std::string& path, const std::vector<Metrics>& metrics) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create metrics file: " + path);
    out << "epoch,train_loss,train_acc,val_acc,seconds\n";
    char buf[128];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.4f,%.4f,%.3f\n", m.epoch, m.train_loss,
                      m.train_acc, m.val_acc, m.seconds);
        out << buf;
    }
    out.close();
    if (!out) throw IoError("short write: " + path);
}

}  // namespace amil
