#include "pfedpt/reports.hpp"

#include <cstdio>
#include <ostream>
#include <sstream>

namespace pfedpt {

std::string format_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_round_csv_header(std::ostream& out) { out << kRoundCsvHeader << "\n"; }

void append_round_csv(std::ostream& out, const RoundReport& r) {
  for (const auto& c : r.clients) {
    out << r.round << ',' << c.client_id << ',';
    if (c.sampled) out << format_metric(c.train_loss);
    out << ',' << format_metric(c.test_acc) << ',' << format_metric(r.weighted_acc) << ','
        << format_metric(c.prompt_drift) << ',' << r.wall_ms << "\n";
  }
}

std::string round_csv(const std::vector<RoundReport>& reports) {
  std::ostringstream os;
  write_round_csv_header(os);
  for (const auto& r : reports) append_round_csv(os, r);
  return os.str();
}

std::string strip_csv_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  int drop = -1;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      for (size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) drop = static_cast<int>(i);
      first = false;
    }
    bool lead = true;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<int>(i) == drop) continue;
      if (!lead) out << ',';
      out << cells[i];
      lead = false;
    }
    out << "\n";
  }
  return out.str();
}

void write_shard_manifest_csv(std::ostream& out, const std::vector<ClientShard>& shards) {
  out << "client_id,split,index\n";
  for (const auto& s : shards) {
    for (int i : s.train_idx) out << s.client_id << ",train," << i << "\n";
    for (int i : s.test_idx) out << s.client_id << ",test," << i << "\n";
  }
}

void write_drift_csv(std::ostream& out, const std::vector<RoundReport>& reports) {
  out << "round,mean_drift\n";
  for (const auto& r : reports) {
    if (r.round == 0) continue;  // drift is defined from round 1 onward
    out << r.round << ',' << format_metric(r.mean_drift) << "\n";
  }
}

void write_similarity_csv(std::ostream& out, const std::vector<SimilarityRow>& rows) {
  out << "client_id,algorithm,score\n";
  for (const auto& r : rows)
    out << r.client_id << ',' << r.algorithm << ',' << format_metric(r.score) << "\n";
}

void write_finetune_csv(std::ostream& out, const std::string& mode,
                        const std::vector<double>& curve) {
  out << "epoch,mode,accuracy\n";
  for (size_t e = 0; e < curve.size(); ++e)
    out << e << ',' << mode << ',' << format_metric(curve[e]) << "\n";
}

void write_embeddings_header(std::ostream& out, Index dims) {
  out << "client_id,image_id";
  for (Index d = 0; d < dims; ++d) out << ",dim_" << d;
  out << "\n";
}

void append_embeddings(std::ostream& out, int client_id, const std::vector<int>& image_ids,
                       const RowMatrix<float>& embeddings) {
  for (Index r = 0; r < embeddings.rows(); ++r) {
    out << client_id << ',' << image_ids[static_cast<size_t>(r)];
    for (Index d = 0; d < embeddings.cols(); ++d)
      out << ',' << format_metric(static_cast<double>(embeddings(r, d)));
    out << "\n";
  }
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace pfedpt
