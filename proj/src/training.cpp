#include "missfuse/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace missfuse {

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.max_epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) +
                      " outside [0, " + std::to_string(cfg.max_epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr * static_cast<double>(epoch) /
           static_cast<double>(cfg.warmup_epochs);
  }
  const double t = static_cast<double>(epoch - cfg.warmup_epochs) /
                   static_cast<double>(cfg.max_epochs - cfg.warmup_epochs);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void write_history(const std::string& path,
                   const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open history file for writing: " + path);
  out << "epoch\tloss\tlr\tval_macro_f1\tkl_term\n";
  char line[160];
  for (const auto& rec : history) {
    std::snprintf(line, sizeof(line), "%d\t%.9g\t%.9g\t%.9g\t%.9g\n", rec.epoch,
                  rec.loss, rec.lr, rec.val_macro_f1, rec.kl_term);
    out << line;
  }
}

std::vector<EpochRecord> read_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history file: " + path);
  std::vector<EpochRecord> history;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty() || line[0] == '#') continue;
    EpochRecord rec;
    std::istringstream is(line);
    if (!(is >> rec.epoch >> rec.loss >> rec.lr >> rec.val_macro_f1 >>
          rec.kl_term)) {
      throw ParseError("history " + path + ": malformed line " +
                       std::to_string(line_no));
    }
    history.push_back(rec);
  }
  return history;
}

}  // namespace missfuse
