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

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "dgann/ground_truth.hpp"
#include "dgann/io_vecs.hpp"
#include "dgann/query.hpp"
#include "dgann/synthetic.hpp"
#include "dgann/workload.hpp"

namespace {

using namespace dgann;

// Row -> node-id mapping written at build time so ground-truth files keyed
// by dataset row can be replayed against the index.
void save_rowmap(const std::string& base, const std::vector<node_id_t>& map) {
  std::ofstream f(base + ".rowmap", std::ios::binary | std::ios::trunc);
  const std::uint64_t n = map.size();
  f.write("DGRM", 4);
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(map.data()),
          static_cast<std::streamsize>(4 * map.size()));
  if (!f) throw IoError("save_rowmap: write failed");
}

std::vector<node_id_t> load_rowmap(const std::string& base) {
  std::ifstream f(base + ".rowmap", std::ios::binary);
  if (!f) throw IoError("load_rowmap: cannot open " + base + ".rowmap");
  char magic[4];
  std::uint64_t n = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&n), 8);
  if (!f || std::memcmp(magic, "DGRM", 4) != 0)
    throw MalformedInput("load_rowmap: bad header");
  std::vector<node_id_t> map(n);
  f.read(reinterpret_cast<char*>(map.data()), static_cast<std::streamsize>(4 * n));
  if (!f) throw MalformedInput("load_rowmap: truncated");
  return map;
}

std::vector<std::vector<node_id_t>> truth_as_node_ids(
    const std::string& truth_path, const std::string& index_base,
    std::size_t k) {
  auto rows = read_ivecs_ids(truth_path);
  const auto rowmap = load_rowmap(index_base);
  for (auto& r : rows) {
    if (r.size() > k) r.resize(k);
    for (node_id_t& id : r) {
      if (id >= rowmap.size())
        throw MalformedInput("truth row index outside built dataset");
      id = rowmap[id];
    }
  }
  return rows;
}

struct GenArgs {
  std::string out;
  std::size_t n = 100000, dim = 128, clusters = 100;
  float sigma = 0.3f;
  std::uint64_t seed = 42;
};

struct BuildArgs {
  std::string data, index;
  BuildParams bp;
  std::uint32_t pqs = 2, m = 0;
  std::uint64_t seed = 42;
  bool vector_layout_opt = false;
  bool coupled_accounting = true;
  std::size_t buffer_pages = 64, pinned_pages = 256;
  std::uint32_t permille = 1;
};

int run(CLI::App& app, int argc, char** argv) {
  app.require_subcommand(1);

  GenArgs g;
  auto* gen = app.add_subcommand("gen", "write a synthetic Gaussian-mixture fvecs file");
  gen->add_option("--out", g.out)->required();
  gen->add_option("--n", g.n);
  gen->add_option("--dim", g.dim);
  gen->add_option("--clusters", g.clusters);
  gen->add_option("--sigma", g.sigma);
  gen->add_option("--seed", g.seed);

  BuildArgs b;
  auto* build = app.add_subcommand("build", "build an index from a vecs file");
  build->add_option("--data", b.data)->required();
  build->add_option("--index", b.index)->required();
  build->add_option("--R", b.bp.R);
  build->add_option("--L-build", b.bp.L_build);
  build->add_option("--max-c", b.bp.max_c);
  build->add_option("--alpha", b.bp.alpha);
  build->add_option("--pqs", b.pqs);
  build->add_option("--m", b.m);
  build->add_option("--seed", b.seed);
  build->add_option("--buffer-pages", b.buffer_pages);
  build->add_option("--pinned-pages", b.pinned_pages);
  build->add_option("--consolidate-permille", b.permille);
  build->add_flag("--vector-layout-opt", b.vector_layout_opt);
  build->add_flag("--coupled-accounting,!--no-coupled-accounting",
                  b.coupled_accounting);

  std::string in_index, in_data;
  std::size_t in_count = 0;
  auto* ins = app.add_subcommand("insert", "insert vectors from a vecs file");
  ins->add_option("--index", in_index)->required();
  ins->add_option("--data", in_data)->required();
  ins->add_option("--count", in_count, "insert only the first N rows");

  std::string del_index, del_ids;
  std::size_t del_count = 0;
  std::uint64_t del_seed = 1;
  bool del_consolidate = false;
  auto* del = app.add_subcommand("delete", "tombstone nodes (lazy)");
  del->add_option("--index", del_index)->required();
  del->add_option("--ids", del_ids, "ivecs file of node ids");
  del->add_option("--count", del_count, "delete N random live nodes");
  del->add_option("--seed", del_seed);
  del->add_flag("--consolidate", del_consolidate, "force consolidation now");

  std::string q_index, q_queries, q_truth, q_csv;
  QueryParams qp;
  unsigned q_threads = 1;
  auto* query = app.add_subcommand("query", "run top-k queries");
  query->add_option("--index", q_index)->required();
  query->add_option("--queries", q_queries)->required();
  query->add_option("--k", qp.k);
  query->add_option("--l", qp.l);
  query->add_option("--tau-T", qp.tau_T, "override calibrated T");
  query->add_option("--pqs", qp.num_pqs, "quantizers used for filtering");
  query->add_option("--truth", q_truth, "row-indexed ivecs ground truth");
  query->add_option("--threads", q_threads);
  query->add_option("--csv", q_csv, "per-query csv path");

  std::string c_index, c_queries, c_truth;
  QueryParams cp;
  std::size_t c_sample = 100;
  auto* calib = app.add_subcommand("calibrate-tau", "warm-up calibration of T");
  calib->add_option("--index", c_index)->required();
  calib->add_option("--queries", c_queries)->required();
  calib->add_option("--truth", c_truth)->required();
  calib->add_option("--k", cp.k);
  calib->add_option("--l", cp.l);
  calib->add_option("--target-recall", cp.target_recall);
  calib->add_option("--sample", c_sample);
  calib->add_option("--pqs", cp.num_pqs);

  WorkloadConfig w;
  std::string w_dir = ".", w_csv;
  auto* bench = app.add_subcommand("bench", "build + update rounds + query benchmark");
  bench->add_option("--data", w.dataset_path, "vecs dataset (synthetic when absent)");
  bench->add_option("--queries", w.query_path);
  bench->add_option("--synth-n", w.synth_n);
  bench->add_option("--synth-dim", w.synth_dim);
  bench->add_option("--synth-clusters", w.synth_clusters);
  bench->add_option("--synth-sigma", w.synth_sigma);
  bench->add_option("--initial-fraction", w.initial_fraction);
  bench->add_option("--rounds", w.rounds);
  bench->add_option("--round-fraction", w.round_fraction);
  bench->add_option("--k", w.k);
  bench->add_option("--l", w.l);
  bench->add_option("--target-recall", w.target_recall);
  bench->add_option("--num-queries", w.num_queries);
  bench->add_option("--warmup-samples", w.warmup_samples);
  bench->add_option("--threads", w.query_threads);
  bench->add_option("--seed", w.seed);
  bench->add_option("--R", w.build.R);
  bench->add_option("--L-build", w.build.L_build);
  bench->add_option("--max-c", w.build.max_c);
  bench->add_option("--alpha", w.build.alpha);
  bench->add_option("--pqs", w.num_pqs);
  bench->add_option("--m", w.pq_subspaces);
  bench->add_option("--buffer-pages", w.buffer_pages);
  bench->add_option("--pinned-pages", w.pinned_pages);
  bench->add_option("--workdir", w_dir);
  bench->add_option("--csv", w_csv, "csv output prefix");
  bench->add_flag("--vector-layout-opt", w.vector_layout_opt);
  bench->add_flag("--coupled-accounting,!--no-coupled-accounting",
                  w.coupled_accounting);

  std::string s_index;
  auto* stats = app.add_subcommand("stats", "index and I/O counters");
  stats->add_option("--index", s_index)->required();

  app.parse(argc, argv);

  if (*gen) {
    MixtureParams mp;
    mp.clusters = g.clusters;
    mp.sigma = g.sigma;
    write_fvecs(g.out, gen_gaussian_mixture(g.n, g.dim, g.seed, mp));
    std::cout << "wrote " << g.n << " x " << g.dim << " vectors to " << g.out
              << "\n";
  } else if (*build) {
    const VectorArray data = read_vecs(b.data);
    IndexOptions opts;
    opts.build = b.bp;
    opts.num_pqs = b.pqs;
    opts.pq_subspaces = b.m;
    opts.seed = b.seed;
    opts.vector_layout_opt = b.vector_layout_opt;
    opts.coupled_accounting = b.coupled_accounting;
    opts.buffer_pages = b.buffer_pages;
    opts.pinned_pages = b.pinned_pages;
    opts.auto_consolidate_permille = b.permille;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<node_id_t> rowmap;
    auto index = Index::build(b.index, data, opts, &rowmap);
    index->save();
    save_rowmap(b.index, rowmap);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::cout << "built " << data.size() << " vectors (D=" << data.dim()
              << ") in " << secs << "s; entry node " << index->entry_node()
              << "\n";
  } else if (*ins) {
    auto index = Index::open(in_index);
    const VectorArray data = read_vecs(in_data);
    const std::size_t n = in_count ? std::min(in_count, data.size()) : data.size();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) index->insert(data[i]);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    index->save();
    std::cout << "inserted " << n << " vectors in " << secs << "s ("
              << (secs > 0 ? n / secs : 0) << "/s)\n";
  } else if (*del) {
    auto index = Index::open(del_index);
    std::vector<node_id_t> ids;
    if (!del_ids.empty()) {
      for (const auto& row : read_ivecs_ids(del_ids))
        ids.insert(ids.end(), row.begin(), row.end());
    } else if (del_count > 0) {
      std::mt19937_64 rng(del_seed);
      std::vector<node_id_t> live;
      for (node_id_t n = 0; n < index->store().next_node_id(); ++n)
        if (index->store().node_live(n)) live.push_back(n);
      for (std::size_t i = 0; i < del_count && !live.empty(); ++i) {
        const std::size_t pick = rng() % live.size();
        ids.push_back(live[pick]);
        live[pick] = live.back();
        live.pop_back();
      }
    } else {
      throw CLI::ValidationError("delete", "need --ids or --count");
    }
    const auto t0 = std::chrono::steady_clock::now();
    for (node_id_t n : ids) index->remove(n);
    if (del_consolidate) index->consolidate_deletes();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    index->save();
    std::cout << "deleted " << ids.size() << " nodes in " << secs << "s ("
              << (secs > 0 ? ids.size() / secs : 0) << "/s)\n";
  } else if (*query) {
    auto index = Index::open(q_index);
    const VectorArray queries = read_vecs(q_queries);
    if (qp.tau_T == 0) qp.tau_T = index->tau_T();
    std::vector<std::vector<node_id_t>> truth;
    if (!q_truth.empty()) truth = truth_as_node_ids(q_truth, q_index, qp.k);

    std::vector<std::vector<node_id_t>> results(queries.size());
    std::vector<double> lat(queries.size());
    std::vector<QueryTrace> traces(queries.size());
    const auto t0 = std::chrono::steady_clock::now();
    auto worker = [&](std::size_t b0, std::size_t e0) {
      for (std::size_t i = b0; i < e0; ++i) {
        const auto s = std::chrono::steady_clock::now();
        const auto res = search(*index, queries[i], qp, &traces[i]);
        lat[i] = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - s)
                     .count();
        for (const auto& [id, d] : res) results[i].push_back(id);
      }
    };
    const unsigned nt = std::max(1u, q_threads);
    std::vector<std::thread> pool;
    const std::size_t chunk = (queries.size() + nt - 1) / nt;
    for (unsigned t = 0; t < nt; ++t) {
      const std::size_t b0 = t * chunk, e0 = std::min(queries.size(), b0 + chunk);
      if (b0 < e0) pool.emplace_back(worker, b0, e0);
    }
    for (auto& th : pool) th.join();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    double recall = -1;
    if (!truth.empty()) {
      double sum = 0;
      for (std::size_t i = 0; i < results.size(); ++i)
        sum += recall_at_k(results[i], truth[i]);
      recall = sum / results.size();
    }
    std::cout << queries.size() << " queries in " << secs << "s ("
              << (secs > 0 ? queries.size() / secs : 0) << " qps)";
    if (recall >= 0) std::cout << ", recall@" << qp.k << " = " << recall;
    std::cout << "\n";
    if (!q_csv.empty()) {
      std::ofstream f(q_csv, std::ios::trunc);
      f << "query,latency_ms,queue,tau,refined,stage1_pages,stage3_pages\n";
      for (std::size_t i = 0; i < results.size(); ++i)
        f << i << ',' << lat[i] << ',' << traces[i].queue_size << ','
          << traces[i].tau << ',' << traces[i].refined_size << ','
          << traces[i].stage1_pages_read << ','
          << traces[i].stage3_vec_pages << "\n";
    }
  } else if (*calib) {
    auto index = Index::open(c_index);
    VectorArray queries = read_vecs(c_queries);
    auto truth = truth_as_node_ids(c_truth, c_index, cp.k);
    const std::size_t n = std::min({c_sample, queries.size(), truth.size()});
    VectorArray sample(queries.dim());
    std::vector<std::vector<node_id_t>> sample_truth;
    for (std::size_t i = 0; i < n; ++i) {
      sample.push_back(queries[i]);
      sample_truth.push_back(truth[i]);
    }
    const std::uint32_t T = warmup_tau(*index, sample, sample_truth, cp);
    index->set_tau_T(T);
    index->save();
    std::cout << "T = " << T << " (tau at l=" << cp.l << ": "
              << effective_tau(T, cp.l) << "), stored in index\n";
  } else if (*bench) {
    const Report rep = run_workload(w, w_dir);
    rep.write_text(std::cout);
    if (!w_csv.empty()) rep.write_csv(w_csv);
  } else if (*stats) {
    auto index = Index::open(s_index);
    const IndexStats st = index->index_stats();
    const Store& store = index->store();
    const IoStatsSnapshot io = store.io_snapshot();
    std::cout << "nodes=" << st.nodes << " deleted=" << st.deleted
              << " mean_degree=" << st.mean_degree << "\n"
              << "D=" << store.dim() << " R=" << store.max_degree()
              << " record=" << store.record_size() << "B"
              << " topo_cap=" << store.topo_capacity()
              << " vec_cap=" << store.vec_capacity()
              << " coupled_cap=" << store.coupled_capacity()
              << " read_amp=" << store.read_amplification() << "\n"
              << "pages: topo=" << store.topo_page_count()
              << " vec=" << store.vec_page_count() << "\n"
              << "io: topo r/w=" << io.topo_pages_read << "/"
              << io.topo_pages_written << " vec r/w=" << io.vec_pages_read
              << "/" << io.vec_pages_written << " bytes=" << io.bytes_total()
              << " coupled_equiv=" << io.coupled_equiv_bytes << "\n"
              << "entry=" << index->entry_node() << " tau_T=" << index->tau_T()
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgann: decoupled on-disk dynamic graph ANN index"};
  try {
    return run(app, argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const dgann::InvalidParams& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dgann::IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dgann::MalformedInput& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const dgann::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
