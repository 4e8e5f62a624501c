// Copyright 2026-present the dgann project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "dgann/ground_truth.hpp"
#include "dgann/io_vecs.hpp"
#include "dgann/query.hpp"
#include "dgann/synthetic.hpp"

namespace dgann {

struct WorkloadConfig {
  // Dataset: a vecs file, or the seeded synthetic mixture when empty.
  std::string dataset_path;
  std::string query_path;  // empty: hold out the dataset's tail as queries
  std::size_t synth_n = 100000;
  std::size_t synth_dim = 128;
  std::size_t synth_clusters = 100;
  float synth_sigma = 0.3f;

  // Update methodology: initial build fraction, then rounds of
  // insert+delete batches sized as a fraction of the dataset.
  double initial_fraction = 0.80;
  std::uint32_t rounds = 32;
  double round_fraction = 0.001;

  // Query phase.
  std::uint32_t k = 10;
  std::uint32_t l = 300;
  double target_recall = 0.98;
  std::uint32_t num_queries = 1000;
  std::uint32_t warmup_samples = 100;
  unsigned query_threads = 1;

  std::uint64_t seed = 42;

  // Index parameters.
  BuildParams build;
  std::uint32_t num_pqs = 2;
  std::uint32_t pq_subspaces = 0;
  bool vector_layout_opt = false;
  bool coupled_accounting = true;
  std::size_t buffer_pages = 64;
  std::size_t pinned_pages = 256;

  void validate() const {
    if (initial_fraction <= 0.0 || initial_fraction > 1.0)
      throw InvalidParams("config: 0 < initial_fraction <= 1");
    if (round_fraction < 0.0 ||
        round_fraction * rounds > 1.0 - initial_fraction + 1e-12)
      throw InvalidParams("config: rounds*round_fraction must fit the held-back slice");
    if (k < 1 || l < k) throw InvalidParams("config: need 1 <= k <= l");
    if (num_queries < 1 || warmup_samples < 1)
      throw InvalidParams("config: need queries and warmup samples");
    build.validate();
  }
};

struct PhaseIo {
  std::string name;
  double seconds = 0;
  IoStatsSnapshot io;
};

struct Report {
  std::uint32_t k = 0, l = 0, tau_T = 0, num_pqs = 0;
  double recall = 0;
  std::size_t queries = 0;
  double qps = 0, mean_ms = 0, p50_ms = 0, p95_ms = 0, p99_ms = 0;
  std::uint64_t inserted = 0, deleted = 0;
  double insert_per_sec = 0, delete_per_sec = 0;
  double avg_stage1_pages = 0, avg_queue = 0, avg_refined = 0,
         avg_stage3_pages = 0;
  double buffer_hit_rate = 0;
  std::vector<PhaseIo> phases;
  IoStatsSnapshot total;

  void write_text(std::ostream& os) const {
    os << std::fixed << std::setprecision(4);
    os << "recall@" << k << " = " << recall << "  (l=" << l << ", T=" << tau_T
       << ", c=" << num_pqs << ", queries=" << queries << ")\n";
    os << "query: qps=" << std::setprecision(1) << qps
       << " mean_ms=" << std::setprecision(3) << mean_ms << " p50=" << p50_ms
       << " p95=" << p95_ms << " p99=" << p99_ms << "\n";
    os << "updates: inserted=" << inserted << " (" << std::setprecision(1)
       << insert_per_sec << "/s)  deleted=" << deleted << " ("
       << delete_per_sec << "/s, incl. consolidation)\n";
    os << "per-query averages: stage1_pages=" << std::setprecision(2)
       << avg_stage1_pages << " queue=" << avg_queue
       << " refined=" << avg_refined << " stage3_pages=" << avg_stage3_pages
       << " buffer_hit_rate=" << std::setprecision(4) << buffer_hit_rate
       << "\n";
    for (const PhaseIo& p : phases) {
      os << "phase " << std::left << std::setw(10) << p.name << std::right
         << " " << std::setprecision(2) << std::setw(8) << p.seconds << "s"
         << "  topo r/w=" << p.io.topo_pages_read << "/"
         << p.io.topo_pages_written << "  vec r/w=" << p.io.vec_pages_read
         << "/" << p.io.vec_pages_written << "  bytes=" << p.io.bytes_total()
         << "  coupled_equiv=" << p.io.coupled_equiv_bytes << "\n";
    }
    os << "totals: bytes=" << total.bytes_total()
       << " coupled_equiv=" << total.coupled_equiv_bytes << "\n";
  }

  void write_csv(const std::filesystem::path& prefix) const {
    {
      std::ofstream f(prefix.string() + "summary.csv", std::ios::trunc);
      f << "k,l,tau_T,num_pqs,queries,recall,qps,mean_ms,p50_ms,p95_ms,p99_ms,"
           "inserted,insert_per_sec,deleted,delete_per_sec,"
           "avg_stage1_pages,avg_queue,avg_refined,avg_stage3_pages,"
           "buffer_hit_rate,bytes_total,coupled_equiv_bytes\n";
      f << k << ',' << l << ',' << tau_T << ',' << num_pqs << ',' << queries
        << ',' << recall << ',' << qps << ',' << mean_ms << ',' << p50_ms
        << ',' << p95_ms << ',' << p99_ms << ',' << inserted << ','
        << insert_per_sec << ',' << deleted << ',' << delete_per_sec << ','
        << avg_stage1_pages << ',' << avg_queue << ',' << avg_refined << ','
        << avg_stage3_pages << ',' << buffer_hit_rate << ','
        << total.bytes_total() << ',' << total.coupled_equiv_bytes << "\n";
    }
    {
      std::ofstream f(prefix.string() + "phases.csv", std::ios::trunc);
      f << "phase,seconds,topo_pages_read,topo_pages_written,vec_pages_read,"
           "vec_pages_written,bytes_read,bytes_written,coupled_equiv_bytes\n";
      for (const PhaseIo& p : phases)
        f << p.name << ',' << p.seconds << ',' << p.io.topo_pages_read << ','
          << p.io.topo_pages_written << ',' << p.io.vec_pages_read << ','
          << p.io.vec_pages_written << ',' << p.io.bytes_read << ','
          << p.io.bytes_written << ',' << p.io.coupled_equiv_bytes << "\n";
    }
  }
};

namespace detail {

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t i = static_cast<std::size_t>(
      std::min<double>(v.size() - 1, std::ceil(p * v.size()) - 1));
  return v[i];
}

}  // namespace detail

/// Builds the initial index from the configured fraction, replays update
/// rounds, calibrates tau on a warm-up sample, runs the query batch, and
/// reconciles the per-phase I/O deltas into a Report.
inline Report run_workload(const WorkloadConfig& cfg,
                           const std::filesystem::path& workdir,
                           std::vector<std::vector<node_id_t>>* results_out = nullptr) {
  cfg.validate();
  using clock = std::chrono::steady_clock;

  VectorArray data;
  VectorArray queries;
  if (cfg.dataset_path.empty()) {
    MixtureParams mp;
    mp.clusters = cfg.synth_clusters;
    mp.sigma = cfg.synth_sigma;
    data = gen_gaussian_mixture(cfg.synth_n + cfg.num_queries, cfg.synth_dim,
                                cfg.seed, mp);
  } else {
    data = read_vecs(cfg.dataset_path);
  }
  if (!cfg.query_path.empty()) {
    queries = read_vecs(cfg.query_path);
  } else {
    // Hold out the tail of the dataset as the query slice.
    if (data.size() <= cfg.num_queries)
      throw InvalidParams("run_workload: dataset too small for held-out queries");
    queries = VectorArray(data.dim());
    for (std::size_t i = data.size() - cfg.num_queries; i < data.size(); ++i)
      queries.push_back(data[i]);
    VectorArray head(data.dim());
    for (std::size_t i = 0; i + cfg.num_queries < data.size(); ++i)
      head.push_back(data[i]);
    data = std::move(head);
  }

  const std::size_t n_total = data.size();
  const std::size_t n_initial =
      static_cast<std::size_t>(cfg.initial_fraction * n_total);
  const std::size_t per_round = static_cast<std::size_t>(
      std::llround(cfg.round_fraction * static_cast<double>(n_total)));
  if (n_initial == 0) throw InvalidParams("run_workload: dataset too small");

  IndexOptions opts;
  opts.build = cfg.build;
  opts.num_pqs = cfg.num_pqs;
  opts.pq_subspaces = cfg.pq_subspaces;
  opts.seed = cfg.seed;
  opts.vector_layout_opt = cfg.vector_layout_opt;
  opts.coupled_accounting = cfg.coupled_accounting;
  opts.buffer_pages = cfg.buffer_pages;
  opts.auto_consolidate_permille = 0;  // rounds consolidate explicitly

  VectorArray initial(data.dim());
  for (std::size_t i = 0; i < n_initial; ++i) initial.push_back(data[i]);

  Report rep;
  rep.k = cfg.k;
  rep.l = cfg.l;
  rep.num_pqs = cfg.num_pqs;

  auto t0 = clock::now();
  std::vector<node_id_t> row_ids;
  auto index = Index::build(workdir / "index", initial, opts, &row_ids);
  auto t1 = clock::now();
  rep.phases.push_back(
      {"build", std::chrono::duration<double>(t1 - t0).count(),
       index->store().io_snapshot()});

  // Live mirror for ground truth: rows of `data` currently indexed.
  std::vector<std::size_t> live_rows(n_initial);
  std::iota(live_rows.begin(), live_rows.end(), 0);
  std::vector<node_id_t> live_ids = row_ids;
  std::size_t next_row = n_initial;

  std::mt19937_64 rng(cfg.seed ^ 0xC0FFEE);
  const IoStatsSnapshot before_updates = index->store().io_snapshot();
  double insert_secs = 0, delete_secs = 0;
  for (std::uint32_t r = 0; r < cfg.rounds; ++r) {
    const auto ti0 = clock::now();
    for (std::size_t i = 0; i < per_round && next_row < n_total; ++i, ++next_row) {
      live_ids.push_back(index->insert(data[next_row]));
      live_rows.push_back(next_row);
      rep.inserted++;
    }
    const auto ti1 = clock::now();
    insert_secs += std::chrono::duration<double>(ti1 - ti0).count();

    const auto td0 = clock::now();
    for (std::size_t i = 0; i < per_round && !live_ids.empty(); ++i) {
      const std::size_t pick = rng() % live_ids.size();
      index->remove(live_ids[pick]);
      live_ids[pick] = live_ids.back();
      live_ids.pop_back();
      live_rows[pick] = live_rows.back();
      live_rows.pop_back();
      rep.deleted++;
    }
    index->consolidate_deletes();
    const auto td1 = clock::now();
    delete_secs += std::chrono::duration<double>(td1 - td0).count();
  }
  rep.insert_per_sec = insert_secs > 0 ? rep.inserted / insert_secs : 0;
  rep.delete_per_sec = delete_secs > 0 ? rep.deleted / delete_secs : 0;
  rep.phases.push_back({"updates", insert_secs + delete_secs,
                        index->store().io_snapshot() - before_updates});

  // Ground truth over the live set.
  VectorArray live_vecs(data.dim());
  for (std::size_t row : live_rows) live_vecs.push_back(data[row]);
  const auto truth =
      brute_force_knn(live_vecs, live_ids, queries, cfg.k, cfg.query_threads);

  // Warm-up tau calibration on the leading sample of the query slice.
  const IoStatsSnapshot before_calib = index->store().io_snapshot();
  const auto tc0 = clock::now();
  const std::size_t n_warm = std::min<std::size_t>(cfg.warmup_samples, queries.size());
  VectorArray warm(queries.dim());
  std::vector<std::vector<node_id_t>> warm_truth;
  for (std::size_t i = 0; i < n_warm; ++i) {
    warm.push_back(queries[i]);
    warm_truth.push_back(truth[i]);
  }
  QueryParams qp;
  qp.k = cfg.k;
  qp.l = cfg.l;
  qp.target_recall = cfg.target_recall;
  qp.num_pqs = cfg.num_pqs;
  qp.tau_T = warmup_tau(*index, warm, warm_truth, qp);
  index->set_tau_T(qp.tau_T);
  rep.tau_T = qp.tau_T;
  const auto tc1 = clock::now();
  rep.phases.push_back({"calibrate",
                        std::chrono::duration<double>(tc1 - tc0).count(),
                        index->store().io_snapshot() - before_calib});

  // Query batch (the one-time entry-region pin is charged to it).
  const IoStatsSnapshot before_query = index->store().io_snapshot();
  if (cfg.pinned_pages > 0)
    index->buffer().pin_entry_region(index->entry_node(), cfg.pinned_pages);
  index->buffer().reset_folded_stats();
  const std::size_t nq = std::min<std::size_t>(cfg.num_queries, queries.size());
  std::vector<std::vector<node_id_t>> results(nq);
  std::vector<double> lat_ms(nq);
  std::vector<QueryTrace> traces(nq);
  const auto tq0 = clock::now();
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto s = clock::now();
      const auto res = search(*index, queries[i], qp, &traces[i]);
      lat_ms[i] =
          std::chrono::duration<double, std::milli>(clock::now() - s).count();
      results[i].reserve(res.size());
      for (const auto& [id, d] : res) results[i].push_back(id);
    }
  };
  const unsigned nthreads = std::max(1u, cfg.query_threads);
  if (nthreads == 1) {
    worker(0, nq);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (nq + nthreads - 1) / nthreads;
    for (unsigned t = 0; t < nthreads; ++t) {
      const std::size_t b = t * chunk, e = std::min(nq, b + chunk);
      if (b >= e) break;
      pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }
  const auto tq1 = clock::now();
  const double query_secs = std::chrono::duration<double>(tq1 - tq0).count();
  rep.phases.push_back({"query", query_secs,
                        index->store().io_snapshot() - before_query});

  double recall_sum = 0;
  for (std::size_t i = 0; i < nq; ++i)
    recall_sum += recall_at_k(results[i], truth[i]);
  rep.recall = recall_sum / static_cast<double>(nq);
  rep.queries = nq;
  rep.qps = query_secs > 0 ? nq / query_secs : 0;
  rep.mean_ms = std::accumulate(lat_ms.begin(), lat_ms.end(), 0.0) / nq;
  rep.p50_ms = detail::percentile(lat_ms, 0.50);
  rep.p95_ms = detail::percentile(lat_ms, 0.95);
  rep.p99_ms = detail::percentile(lat_ms, 0.99);
  for (const QueryTrace& t : traces) {
    rep.avg_stage1_pages += t.stage1_pages_read;
    rep.avg_queue += t.queue_size;
    rep.avg_refined += t.refined_size;
    rep.avg_stage3_pages += t.stage3_vec_pages;
  }
  rep.avg_stage1_pages /= nq;
  rep.avg_queue /= nq;
  rep.avg_refined /= nq;
  rep.avg_stage3_pages /= nq;
  rep.buffer_hit_rate = index->buffer().folded_stats().hit_rate();
  rep.total = index->store().io_snapshot();

  index->save();
  if (results_out) *results_out = std::move(results);
  return rep;
}

}  // namespace dgann
