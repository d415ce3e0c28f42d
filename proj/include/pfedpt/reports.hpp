#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pfedpt/fl.hpp"
#include "pfedpt/partition.hpp"

namespace pfedpt {

/// Round-trip-safe metric formatting shared by every CSV writer, so
/// bit-identical runs yield byte-identical files.
std::string format_metric(double v);

inline constexpr const char* kRoundCsvHeader =
    "round,client_id,train_loss,test_acc,weighted_acc,prompt_drift,wall_ms";

/// One row per (round, client); train_loss is empty for unsampled clients.
void write_round_csv_header(std::ostream& out);
void append_round_csv(std::ostream& out, const RoundReport& report);
std::string round_csv(const std::vector<RoundReport>& reports);

/// Drops one column from a CSV text; used to compare reports modulo the
/// wall-clock column.
std::string strip_csv_column(const std::string& csv, const std::string& column);

void write_shard_manifest_csv(std::ostream& out, const std::vector<ClientShard>& shards);

void write_drift_csv(std::ostream& out, const std::vector<RoundReport>& reports);

struct SimilarityRow {
  int client_id;
  std::string algorithm;
  double score;
};
void write_similarity_csv(std::ostream& out, const std::vector<SimilarityRow>& rows);

void write_finetune_csv(std::ostream& out, const std::string& mode,
                        const std::vector<double>& curve);

void write_embeddings_header(std::ostream& out, Index dims);
void append_embeddings(std::ostream& out, int client_id, const std::vector<int>& image_ids,
                       const RowMatrix<float>& embeddings);

/// FNV-1a over a string; manifests use it as the config fingerprint.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace pfedpt
