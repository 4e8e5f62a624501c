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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "dgann/ground_truth.hpp"
#include "dgann/query.hpp"
#include "helpers.hpp"

using namespace dgann;
using dgann::test::ScratchDir;
using dgann::test::uniform_vectors;

namespace {

IndexOptions qopts(std::uint32_t R, std::uint32_t L, std::uint32_t maxc,
                   std::uint32_t m) {
  IndexOptions o;
  o.build = BuildParams{R, L, maxc, 1.2f};
  o.num_pqs = 2;
  o.pq_subspaces = m;
  o.seed = 42;
  o.auto_consolidate_permille = 0;
  return o;
}

PQCodebook dummy_codebook() {
  PQCodebook cb;
  cb.num_subspaces = 1;
  cb.subdim = 2;
  cb.centroids.assign(std::size_t(1) * kPqBookSize * 2, 0.f);
  for (std::uint32_t c = 0; c < kPqBookSize; ++c) {
    cb.centroid(0, c)[0] = 1000.f + c;
    cb.centroid(0, c)[1] = 1000.f;
  }
  return cb;
}

}  // namespace

TEST_CASE("effective_tau: fixpoint, paper formula points, rounding, errors") {
  CHECK(effective_tau(64, 64) == 64);  // T = l, log term vanishes
  CHECK(effective_tau(100, 1000) == 200);
  CHECK(effective_tau(50, 500) == 100);
  CHECK_THROWS_AS(effective_tau(0, 10), InvalidParams);
  CHECK_THROWS_AS(effective_tau(11, 10), InvalidParams);

  // Round half up, then clamp at l.
  for (std::uint32_t T : {1u, 7u, 13u, 50u, 99u}) {
    for (std::uint32_t l : {100u, 250u, 1000u}) {
      const double raw = T * (1.0 + std::log10(double(l) / T));
      const std::uint32_t want = static_cast<std::uint32_t>(
          std::min<double>(std::floor(raw + 0.5), l));
      CHECK(effective_tau(T, l) == want);
    }
  }
}

TEST_CASE("percentile_threshold: constructed cover depths") {
  std::vector<std::uint32_t> depths;
  for (std::uint32_t d = 10; d <= 100; d += 10) depths.push_back(d);
  CHECK(percentile_threshold(depths, 0.90, 10, 1000) == 90);
  CHECK(percentile_threshold(depths, 1.00, 10, 1000) == 100);
  CHECK(percentile_threshold(depths, 0.10, 10, 1000) == 10);
  // Clamps: to k from below, to l when uncovered.
  CHECK(percentile_threshold({1, 1, 1}, 0.9, 10, 100) == 10);
  CHECK(percentile_threshold({5, kDepthUncovered, kDepthUncovered}, 0.9, 3,
                             77) == 77);
  CHECK_THROWS_AS(percentile_threshold({}, 0.9, 1, 10), EmptyInput);
}

TEST_CASE("filter_union: whole queue, disjoint bound, worked example") {
  const std::vector<node_id_t> a{1, 2, 4, 5, 3};
  CHECK(filter_union({a}, 5).size() == 5);

  // Disjoint top-tau sets: exactly 2*tau survive.
  const std::vector<node_id_t> x{1, 2, 3, 4}, y{5, 6, 7, 8};
  CHECK(filter_union({x, y}, 2) == std::vector<node_id_t>{1, 2, 5, 6});

  // Two orderings of five candidates: the union of the top-2 of each is 3
  // candidates and covers the true top-3, while either ordering alone
  // needs a prefix of 5 or 4.
  const std::vector<node_id_t> ord_a{11, 12, 14, 15, 13};
  const std::vector<node_id_t> ord_b{13, 12, 15, 11, 14};
  const std::vector<node_id_t> true_top3{11, 12, 13};
  const auto refined = filter_union({ord_a, ord_b}, 2);
  CHECK(refined == std::vector<node_id_t>{11, 12, 13});
  CHECK(cover_depth({ord_a}, true_top3) == 5);
  CHECK(cover_depth({ord_b}, true_top3) == 4);
  CHECK(cover_depth({ord_a, ord_b}, true_top3) == 2);
}

TEST_CASE("cover_depth: uncovered when a true neighbor is absent") {
  CHECK(cover_depth({{1, 2, 3}}, {9}) == kDepthUncovered);
  CHECK(cover_depth({{1, 2, 3}}, {}) == 0);
}

TEST_CASE("three-stage query on a real index: bounds, containment, IO") {
  ScratchDir dir("query_real");
  const std::size_t n = 800;
  const VectorArray data = uniform_vectors(n, 16, 61);
  std::vector<node_id_t> ids;
  auto idx = Index::build(dir / "i", data, qopts(12, 24, 48, 8), &ids);

  const VectorArray queries = uniform_vectors(40, 16, 62);
  QueryParams qp;
  qp.k = 5;
  qp.l = 40;
  qp.tau_override = 10;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    QueryTrace trace;
    const auto res = search(*idx, queries[qi], qp, &trace);
    REQUIRE(res.size() == qp.k);
    // Refined set size within [tau, min(c*tau, |queue|)].
    CHECK(trace.refined_size >= std::min<std::uint32_t>(10, trace.queue_size));
    CHECK(trace.refined_size <=
          std::min<std::uint32_t>(2 * 10, trace.queue_size));
    // Stage-3 I/O bound: pages <= refined candidates, and exactly the
    // distinct vector pages of the refined set.
    CHECK(trace.stage3_vec_pages <= trace.refined_size);
    CHECK(trace.tau == 10);
    // Results ascend by exact distance.
    for (std::size_t i = 1; i < res.size(); ++i)
      CHECK(res[i - 1].second <= res[i].second);
  }
}

TEST_CASE("refined set contains PQ-A's top-tau; three-stage >= two-stage") {
  ScratchDir dir("query_contain");
  const std::size_t n = 600;
  const VectorArray data = uniform_vectors(n, 16, 63);
  std::vector<node_id_t> ids;
  auto idx = Index::build(dir / "i", data, qopts(12, 24, 48, 8), &ids);
  const VectorArray queries = uniform_vectors(30, 16, 64);
  const auto truth = brute_force_knn(data, ids, queries, 5, 1);

  const std::uint32_t tau = 12;
  double recall2 = 0, recall3 = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    // Reproduce stage 1 to get PQ-A's own ordering.
    const DistanceTable ta = distance_table(queries[qi], idx->codebook(0));
    QueryContext ctx = idx->buffer().open_context();
    auto [queue, visited] = greedy_search(
        idx->entry_node(), 24,
        [&](node_id_t m) { return idx->pq_distance(0, m, ta); },
        idx->neighbor_provider(ctx));
    idx->buffer().end_query(ctx);
    const auto a_ids = queue.ids();
    const std::size_t take = std::min<std::size_t>(tau, a_ids.size());

    const auto refined = filter_candidates(*idx, queue, queries[qi],
                                           static_cast<std::uint32_t>(take), 2);
    for (std::size_t i = 0; i < take; ++i)
      CHECK(std::binary_search(refined.begin(), refined.end(), a_ids[i]));

    QueryParams qp;
    qp.k = 5;
    qp.l = 24;
    qp.tau_override = tau;
    qp.num_pqs = 1;
    std::vector<node_id_t> got2, got3;
    for (const auto& [id, d] : search(*idx, queries[qi], qp)) got2.push_back(id);
    qp.num_pqs = 2;
    for (const auto& [id, d] : search(*idx, queries[qi], qp)) got3.push_back(id);
    recall2 += recall_at_k(got2, truth[qi]);
    recall3 += recall_at_k(got3, truth[qi]);
  }
  CHECK(recall3 >= recall2);
}

TEST_CASE("degenerate filters: c=1 tau=l reranks the whole queue; identical PQs") {
  ScratchDir dir("query_degen");
  const std::size_t n = 400;
  const VectorArray data = uniform_vectors(n, 16, 65);
  std::vector<node_id_t> ids;

  IndexOptions o = qopts(12, 24, 48, 8);
  o.num_pqs = 1;
  auto idx = Index::create(dir / "i", 16, o);
  const PQCodebook cb = train_pq(data, 8, 0, 9);
  idx->set_codebooks({cb, cb});  // two identical quantizers (same seed)
  for (std::size_t i = 0; i < n; ++i) ids.push_back(idx->insert(data[i]));

  const VectorArray queries = uniform_vectors(20, 16, 66);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    QueryParams qp;
    qp.k = 5;
    qp.l = 24;

    // tau = l with c = 1: identical to exhaustively reranking the queue.
    qp.num_pqs = 1;
    QueryTrace trace;
    const auto res = search(*idx, queries[qi], qp, &trace);
    CHECK(trace.refined_size == trace.queue_size);

    const DistanceTable ta = distance_table(queries[qi], idx->codebook(0));
    QueryContext ctx = idx->buffer().open_context();
    auto [queue, visited] = greedy_search(
        idx->entry_node(), 24,
        [&](node_id_t m) { return idx->pq_distance(0, m, ta); },
        idx->neighbor_provider(ctx));
    idx->buffer().end_query(ctx);
    auto qids = queue.ids();
    VectorArray vecs = idx->store().read_vectors(qids);
    std::vector<std::pair<float, node_id_t>> exact;
    for (std::size_t i = 0; i < qids.size(); ++i)
      exact.push_back(
          {squared_l2(queries[qi].data(), vecs[i].data(), 16), qids[i]});
    std::sort(exact.begin(), exact.end());
    for (std::size_t i = 0; i < res.size(); ++i)
      CHECK(res[i].first == exact[i].second);

    // Identical quantizers: the union of top-tau sets degenerates to
    // PQ-A's top-tau, so c=2 equals the two-stage result at equal tau.
    qp.tau_override = 8;
    qp.num_pqs = 2;
    QueryTrace t2;
    const auto res_two_pq = search(*idx, queries[qi], qp, &t2);
    CHECK(t2.refined_size == std::min<std::uint32_t>(8, t2.queue_size));
    qp.num_pqs = 1;
    const auto res_one_pq = search(*idx, queries[qi], qp);
    CHECK(res_two_pq == res_one_pq);
  }
}

TEST_CASE("monotone recall in tau") {
  ScratchDir dir("query_mono");
  const std::size_t n = 800;
  const VectorArray data = uniform_vectors(n, 16, 67);
  std::vector<node_id_t> ids;
  auto idx = Index::build(dir / "i", data, qopts(12, 24, 48, 4), &ids);
  const VectorArray queries = uniform_vectors(50, 16, 68);
  const auto truth = brute_force_knn(data, ids, queries, 5, 1);

  double prev = -1;
  for (std::uint32_t tau : {5u, 10u, 16u, 24u}) {
    QueryParams qp;
    qp.k = 5;
    qp.l = 24;
    qp.tau_override = tau;
    double recall = 0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      std::vector<node_id_t> got;
      for (const auto& [id, d] : search(*idx, queries[qi], qp))
        got.push_back(id);
      recall += recall_at_k(got, truth[qi]);
    }
    recall /= queries.size();
    CHECK(recall >= prev);
    prev = recall;
  }
}

TEST_CASE("crafted codebooks: PQ-B rescues a true NN that PQ-A buries") {
  // Ten collinear-ish points; PQ-A quantizes the three decoys onto a
  // centroid sitting right next to the query, pushing the true nearest
  // neighbor to A-rank 4 (= tau + 2). PQ-B is exact, ranking it first.
  ScratchDir dir("query_craft");
  VectorArray data(2);
  data.push_back(std::vector<float>{0.f, 0.f});    // true NN of q
  data.push_back(std::vector<float>{-0.9f, 0.f});  // decoys encode to B
  data.push_back(std::vector<float>{-0.95f, 0.f});
  data.push_back(std::vector<float>{-1.0f, 0.f});
  for (int i = 4; i < 10; ++i)
    data.push_back(std::vector<float>{0.8f + 0.2f * (i - 4), 0.f});
  const DenseVector q{-0.4f, 0.f};

  PQCodebook cb_a = dummy_codebook();
  cb_a.centroid(0, 0)[0] = 0.f;     // v0's centroid, offset in y
  cb_a.centroid(0, 0)[1] = 0.28f;
  cb_a.centroid(0, 1)[0] = -0.3f;   // shared decoy centroid, near q
  cb_a.centroid(0, 1)[1] = 0.f;
  for (int i = 4; i < 10; ++i) {
    cb_a.centroid(0, i - 2)[0] = data[i][0];
    cb_a.centroid(0, i - 2)[1] = 0.f;
  }
  PQCodebook cb_b = dummy_codebook();
  cb_b.pq_id = 1;
  for (int i = 0; i < 10; ++i) {
    cb_b.centroid(0, i)[0] = data[i][0];
    cb_b.centroid(0, i)[1] = data[i][1];
  }

  IndexOptions o = qopts(16, 16, 32, 1);
  auto idx = Index::create(dir / "i", 2, o);
  idx->set_codebooks({cb_a, cb_b});
  std::vector<node_id_t> ids;
  for (std::size_t i = 0; i < data.size(); ++i) ids.push_back(idx->insert(data[i]));

  // Confirm the crafted A-ordering: decoys first, true NN at position 4.
  const DistanceTable ta = distance_table(q, idx->codebook(0));
  QueryContext ctx = idx->buffer().open_context();
  auto [queue, visited] = greedy_search(
      idx->entry_node(), 10,
      [&](node_id_t m) { return idx->pq_distance(0, m, ta); },
      idx->neighbor_provider(ctx));
  idx->buffer().end_query(ctx);
  REQUIRE(queue.size() == 10);
  const auto a_order = queue.ids();
  CHECK(a_order[0] == ids[1]);
  CHECK(a_order[3] == ids[0]);  // true NN at tau + 2 for tau = 2

  QueryParams qp;
  qp.k = 1;
  qp.l = 10;
  qp.tau_override = 2;
  qp.num_pqs = 2;
  const auto res3 = search(*idx, q, qp);
  REQUIRE(res3.size() == 1);
  CHECK(res3[0].first == ids[0]);  // rescued by PQ-B

  qp.num_pqs = 1;
  const auto res2 = search(*idx, q, qp);
  CHECK(res2[0].first != ids[0]);  // two-stage at the same tau misses it

  // Warm-up depths on this instance: c=2 covers at 1 (PQ-B first), c=1 at 4.
  VectorArray sample(2);
  sample.push_back(q);
  const std::vector<std::vector<node_id_t>> truth{{ids[0]}};
  QueryParams wp;
  wp.k = 1;
  wp.l = 10;
  wp.target_recall = 1.0;
  wp.num_pqs = 2;
  CHECK(warmup_tau(*idx, sample, truth, wp) == 1);
  wp.num_pqs = 1;
  CHECK(warmup_tau(*idx, sample, truth, wp) == 4);
}

TEST_CASE("search: empty index and bad params rejected") {
  ScratchDir dir("query_err2");
  IndexOptions o = qopts(8, 16, 32, 4);
  auto idx = Index::create(dir / "i", 8, o);
  VectorArray train = uniform_vectors(300, 8, 69);
  idx->set_codebooks({train_pq(train, 4, 0, 1), train_pq(train, 4, 1, 2)});
  const DenseVector q(8, 0.f);
  QueryParams qp;
  CHECK_THROWS_AS(search(*idx, q, qp), EmptyIndex);
  idx->insert(train[0]);
  qp.l = 4;
  qp.k = 9;  // k > l
  CHECK_THROWS_AS(search(*idx, q, qp), InvalidParams);
}
