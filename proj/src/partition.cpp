#include "pfedpt/partition.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "pfedpt/rng.hpp"

namespace pfedpt {

PartitionScheme partition_scheme_from(const std::string& s) {
  if (s == "iid") return PartitionScheme::Iid;
  if (s == "dirichlet") return PartitionScheme::Dirichlet;
  if (s == "pathological") return PartitionScheme::Pathological;
  throw std::invalid_argument("partition: unknown scheme '" + s + "'");
}

const char* to_string(PartitionScheme s) {
  switch (s) {
    case PartitionScheme::Iid: return "iid";
    case PartitionScheme::Dirichlet: return "dirichlet";
    case PartitionScheme::Pathological: return "pathological";
  }
  return "?";
}

void PartitionConfig::validate(int num_classes) const {
  if (num_clients < 1) throw std::invalid_argument("partition: num_clients must be >= 1");
  if (scheme == PartitionScheme::Dirichlet && !(alpha > 0))
    throw std::invalid_argument("partition: alpha must be positive");
  if (scheme == PartitionScheme::Pathological &&
      (classes_per_client < 1 || classes_per_client > num_classes))
    throw std::invalid_argument("partition: classes_per_client must be in [1," +
                                std::to_string(num_classes) + "]");
  if (min_samples < 0) throw std::invalid_argument("partition: min_samples must be >= 0");
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(i))]);
}

std::vector<std::vector<int>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<int>> by_class(static_cast<size_t>(ds.num_classes));
  for (Index i = 0; i < ds.size(); ++i)
    by_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(
        static_cast<int>(i));
  return by_class;
}

/// Largest-remainder apportionment of n items over the given proportions;
/// counts sum to n exactly. Ties go to lower client ids.
std::vector<int> apportion(int n, const std::vector<double>& props) {
  const int k = static_cast<int>(props.size());
  std::vector<int> counts(static_cast<size_t>(k), 0);
  std::vector<std::pair<double, int>> rema(static_cast<size_t>(k));
  int used = 0;
  for (int i = 0; i < k; ++i) {
    const double share = props[static_cast<size_t>(i)] * n;
    counts[static_cast<size_t>(i)] = static_cast<int>(share);
    used += counts[static_cast<size_t>(i)];
    rema[static_cast<size_t>(i)] = {share - counts[static_cast<size_t>(i)], i};
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int r = 0; r < n - used; ++r) ++counts[static_cast<size_t>(rema[static_cast<size_t>(r)].second)];
  return counts;
}

/// Distributes one class's (shuffled) indices across clients per counts.
void deal(const std::vector<int>& pool, const std::vector<int>& counts,
          std::vector<ClientShard>& shards, bool to_train) {
  size_t at = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    auto& dst = to_train ? shards[i].train_idx : shards[i].test_idx;
    for (int k = 0; k < counts[i]; ++k) dst.push_back(pool[at++]);
  }
}

/// Per-class client proportions for one partition attempt; the common
/// currency between the train and test splits.
using ClassProportions = std::vector<std::vector<double>>;  // [class][client]

ClassProportions draw_iid(int classes, int clients) {
  ClassProportions props(static_cast<size_t>(classes),
                         std::vector<double>(static_cast<size_t>(clients), 1.0 / clients));
  return props;
}

ClassProportions draw_dirichlet(int classes, int clients, double alpha, Rng rng) {
  ClassProportions props(static_cast<size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    Rng crng = rng.child(stream_tag("class"), static_cast<std::uint64_t>(c));
    std::vector<double> g(static_cast<size_t>(clients));
    double sum = 0;
    for (auto& v : g) {
      v = crng.gamma(alpha);
      sum += v;
    }
    if (sum <= 0) sum = 1;
    for (auto& v : g) v /= sum;
    props[static_cast<size_t>(c)] = std::move(g);
  }
  return props;
}

/// Deals class slots so each client holds exactly k distinct classes.
/// Most-remaining-copies class first, most-remaining-capacity client first;
/// ties broken by a seeded permutation.
ClassProportions draw_pathological(int classes, int clients, int per_client, Rng rng) {
  const long slots = static_cast<long>(clients) * per_client;
  if (slots < classes)
    throw std::invalid_argument("partition: classes_per_client*num_clients (" +
                                std::to_string(slots) + ") cannot cover " +
                                std::to_string(classes) + " classes");
  std::vector<int> copies(static_cast<size_t>(classes), static_cast<int>(slots / classes));
  std::vector<int> order(static_cast<size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  Rng orng = rng.child(stream_tag("class-order"));
  shuffle(order, orng);
  for (long r = 0; r < slots % classes; ++r) ++copies[static_cast<size_t>(order[static_cast<size_t>(r)])];
  for (int c = 0; c < classes; ++c)
    if (copies[static_cast<size_t>(c)] > clients)
      throw std::invalid_argument(
          "partition: pathological config infeasible: class would repeat within a client");

  // Gale-Ryser construction: deal whole classes, most copies first, each to
  // the clients with the largest remaining capacity. Succeeds whenever the
  // (copies, per_client) degree sequences are feasible.
  std::vector<int> cap(static_cast<size_t>(clients), per_client);
  std::vector<std::vector<std::uint8_t>> has(
      static_cast<size_t>(clients), std::vector<std::uint8_t>(static_cast<size_t>(classes), 0));
  std::vector<int> client_prio(static_cast<size_t>(clients));
  std::iota(client_prio.begin(), client_prio.end(), 0);
  Rng prng = rng.child(stream_tag("client-order"));
  shuffle(client_prio, prng);
  std::vector<int> prio_rank(static_cast<size_t>(clients));
  for (int r = 0; r < clients; ++r) prio_rank[static_cast<size_t>(client_prio[static_cast<size_t>(r)])] = r;

  std::vector<int> class_order = order;
  std::stable_sort(class_order.begin(), class_order.end(), [&](int a, int b) {
    return copies[static_cast<size_t>(a)] > copies[static_cast<size_t>(b)];
  });
  for (int c : class_order) {
    std::vector<int> ranked(static_cast<size_t>(clients));
    std::iota(ranked.begin(), ranked.end(), 0);
    std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
      if (cap[static_cast<size_t>(a)] != cap[static_cast<size_t>(b)])
        return cap[static_cast<size_t>(a)] > cap[static_cast<size_t>(b)];
      return prio_rank[static_cast<size_t>(a)] < prio_rank[static_cast<size_t>(b)];
    });
    int need = copies[static_cast<size_t>(c)];
    for (int i : ranked) {
      if (need == 0) break;
      if (cap[static_cast<size_t>(i)] == 0) break;
      --cap[static_cast<size_t>(i)];
      has[static_cast<size_t>(i)][static_cast<size_t>(c)] = 1;
      --need;
    }
    if (need > 0) throw std::runtime_error("partition: pathological dealing failed");
  }

  ClassProportions props(static_cast<size_t>(classes),
                         std::vector<double>(static_cast<size_t>(clients), 0.0));
  for (int c = 0; c < classes; ++c) {
    const double share = 1.0 / copies[static_cast<size_t>(c)];
    for (int i = 0; i < clients; ++i)
      if (has[static_cast<size_t>(i)][static_cast<size_t>(c)])
        props[static_cast<size_t>(c)][static_cast<size_t>(i)] = share;
  }
  return props;
}

std::vector<ClientShard> build_shards(const Dataset& train, const Dataset& test,
                                      const ClassProportions& props, int clients, Rng rng) {
  std::vector<ClientShard> shards(static_cast<size_t>(clients));
  for (int i = 0; i < clients; ++i) {
    shards[static_cast<size_t>(i)].client_id = i;
    shards[static_cast<size_t>(i)].label_hist.assign(static_cast<size_t>(train.num_classes), 0);
  }
  const auto train_by_class = indices_by_class(train);
  const auto test_by_class = indices_by_class(test);
  for (int c = 0; c < train.num_classes; ++c) {
    auto pool = train_by_class[static_cast<size_t>(c)];
    Rng srng = rng.child(stream_tag("shuffle-train"), static_cast<std::uint64_t>(c));
    shuffle(pool, srng);
    deal(pool, apportion(static_cast<int>(pool.size()), props[static_cast<size_t>(c)]), shards,
         true);

    auto tpool = test_by_class[static_cast<size_t>(c)];
    Rng trng = rng.child(stream_tag("shuffle-test"), static_cast<std::uint64_t>(c));
    shuffle(tpool, trng);
    deal(tpool, apportion(static_cast<int>(tpool.size()), props[static_cast<size_t>(c)]), shards,
         false);
  }
  for (auto& s : shards) {
    std::sort(s.train_idx.begin(), s.train_idx.end());
    std::sort(s.test_idx.begin(), s.test_idx.end());
    for (int idx : s.train_idx)
      ++s.label_hist[static_cast<size_t>(train.labels[static_cast<size_t>(idx)])];
  }
  return shards;
}

}  // namespace

std::vector<ClientShard> partition(const Dataset& train, const Dataset& test,
                                   const PartitionConfig& cfg) {
  cfg.validate(train.num_classes);
  if (train.size() == 0) throw std::invalid_argument("partition: empty training set");
  if (train.num_classes != test.num_classes)
    throw std::invalid_argument("partition: train/test class count mismatch");

  const Rng root(derive_seed(cfg.seed, {stream_tag("partition")}));
  const int attempts = cfg.scheme == PartitionScheme::Iid ? 1 : std::max(1, cfg.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    Rng arng = root.child(stream_tag("attempt"), static_cast<std::uint64_t>(attempt));
    ClassProportions props;
    switch (cfg.scheme) {
      case PartitionScheme::Iid:
        props = draw_iid(train.num_classes, cfg.num_clients);
        break;
      case PartitionScheme::Dirichlet:
        props = draw_dirichlet(train.num_classes, cfg.num_clients, cfg.alpha,
                               arng.child(stream_tag("dirichlet")));
        break;
      case PartitionScheme::Pathological:
        props = draw_pathological(train.num_classes, cfg.num_clients, cfg.classes_per_client,
                                  arng.child(stream_tag("pathological")));
        break;
    }
    auto shards = build_shards(train, test, props, cfg.num_clients, arng.child(stream_tag("deal")));

    bool ok = true;
    for (const auto& s : shards) ok = ok && static_cast<int>(s.train_idx.size()) >= cfg.min_samples;
    if (cfg.scheme == PartitionScheme::Pathological)
      for (const auto& s : shards) ok = ok && s.classes_present() == cfg.classes_per_client;
    if (ok) return shards;
  }
  throw std::runtime_error("partition: retry budget exhausted (" + std::to_string(attempts) +
                           " attempts left a client under min_samples=" +
                           std::to_string(cfg.min_samples) + ")");
}

}  // namespace pfedpt
