//! Bipartite part↔phrase alignment and the consensus guidance step.
//!
//! Part regions and attribute phrases are matched by a minimum-cost perfect
//! matching on cost = −similarity (Kuhn–Munkres, O(n³), with zero-cost dummy
//! padding for unequal set sizes). The Hungarian loss sums matched
//! similarities plus a full-image term, and its gradient at a fixed matching
//! drives a latent ascent step during sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{fold_gradient, unpool, Image, LatentGrid};
use crate::prompt::APTree;
use crate::sim::{embed_ap, embed_part, sim, sim_full};
use crate::world::{segment, PartSet, World};

/// Square cost matrix over parts × phrases after zero-cost dummy padding.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Build from row-major costs of shape `rows × cols`; the smaller side is
    /// padded with zero-cost dummies.
    pub fn from_costs(rows: usize, cols: usize, costs: &[f64]) -> Result<Self> {
        if rows == 0 || cols == 0 || costs.len() != rows * cols {
            return Err(Error::BadShape { context: "cost matrix" });
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { context: "cost matrix" });
        }
        let n = rows.max(cols);
        let mut data = vec![0.0; n * n];
        for r in 0..rows {
            for c in 0..cols {
                data[r * n + c] = costs[r * cols + c];
            }
        }
        Ok(Self { n, rows, cols, data })
    }

    /// Build from similarities, negating so that matching minimizes cost.
    pub fn from_similarities(rows: usize, cols: usize, sims: &[f64]) -> Result<Self> {
        let costs: Vec<f64> = sims.iter().map(|s| -s).collect();
        Self::from_costs(rows, cols, &costs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }
}

/// Minimum-cost perfect matching plus per-pair similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Padded bijection row → column.
    pub perm: Vec<usize>,
    /// Real (unpadded) row and column counts.
    pub rows: usize,
    pub cols: usize,
    /// −cost of each real pair, indexed by row; 0 for rows matched to dummies.
    pub pair_sims: Vec<f64>,
    /// Per real row: matched to a dummy column?
    pub dummy: Vec<bool>,
    pub total_cost: f64,
}

impl Assignment {
    /// Real matched pairs (row, col), both unpadded.
    pub fn real_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.perm
            .iter()
            .enumerate()
            .take(self.rows)
            .filter(|(_, &c)| c < self.cols)
            .map(|(r, &c)| (r, c))
    }
}

/// Kuhn–Munkres with row/column potentials (shortest augmenting paths).
/// Returns the row→column bijection and the total cost.
fn km_solve(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> (Vec<usize>, f64) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1]; // column -> row, 1-based; 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched[j] > 0 {
            row_to_col[matched[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost(i, row_to_col[i])).sum();
    (row_to_col, total)
}

/// Minimum total cost of a perfect matching between the listed rows and
/// columns (used while refining ties).
fn km_subproblem(matrix: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len();
    let (_, total) = km_solve(n, &|i, j| matrix.get(rows[i], cols[j]));
    total
}

/// Minimum-total-cost perfect matching on a padded cost matrix.
///
/// Among equally cheap matchings the lexicographically smallest permutation
/// is returned: rows are fixed in order, each taking the smallest column that
/// still permits an optimal completion. The refinement solves O(n²)
/// subproblems, which is fine at part/phrase scale.
pub fn hungarian(matrix: &CostMatrix) -> Result<Assignment> {
    let n = matrix.n();
    let (_, optimal) = km_solve(n, &|i, j| matrix.get(i, j));
    let scale: f64 = matrix.data.iter().fold(0.0, |m, c| m.max(crate::math::fabs(*c)));
    let tol = 1e-9 * (1.0 + scale * n as f64);

    let mut perm = vec![0usize; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut prefix = 0.0;
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut fixed = None;
        for (slot, &j) in remaining.iter().enumerate() {
            let mut rest_cols = remaining.clone();
            rest_cols.remove(slot);
            let completion = km_subproblem(matrix, &rest_rows, &rest_cols);
            if prefix + matrix.get(i, j) + completion <= optimal + tol {
                fixed = Some((slot, j));
                break;
            }
        }
        let (slot, j) = fixed.expect("an optimal completion always exists");
        perm[i] = j;
        prefix += matrix.get(i, j);
        remaining.remove(slot);
    }

    let total_cost: f64 = (0..n).map(|i| matrix.get(i, perm[i])).sum();
    let rows = matrix.rows();
    let cols = matrix.cols();
    let mut pair_sims = vec![0.0; rows];
    let mut dummy = vec![false; rows];
    for r in 0..rows {
        if perm[r] < cols {
            pair_sims[r] = -matrix.get(r, perm[r]);
        } else {
            dummy[r] = true;
        }
    }
    Ok(Assignment { perm, rows, cols, pair_sims, dummy, total_cost })
}

/// Matching of a segmented image against a phrase tree, with the scores the
/// CLI reports.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub assignment: Assignment,
    /// Matched (part index, phrase index) pairs, unpadded.
    pub pairs: Vec<(usize, usize)>,
    pub sim_full: f64,
    /// Hungarian loss: matched similarities plus the full-image term.
    pub score: f64,
}

/// Match a part set against a phrase tree and score the alignment.
pub fn align(part_set: &PartSet, tree: &APTree, world: &World) -> Result<AlignResult> {
    if part_set.category != tree.category {
        return Err(Error::StructureMismatch {
            detail: alloc::format!(
                "part set is {}, prompt is {}",
                part_set.category.name(),
                tree.category.name()
            ),
        });
    }
    let rows = part_set.parts.len();
    let cols = tree.aps.len();
    let mut sims = vec![0.0; rows * cols];
    for (r, view) in part_set.parts.iter().enumerate() {
        let v = embed_part(&view.image, &view.mask, view.part)?;
        for (c, ap) in tree.aps.iter().enumerate() {
            sims[r * cols + c] = sim(&v, &embed_ap(ap, &world.lexicon));
        }
    }
    let matrix = CostMatrix::from_similarities(rows, cols, &sims)?;
    let assignment = hungarian(&matrix)?;
    let pairs: Vec<(usize, usize)> = assignment.real_pairs().collect();
    let full = sim_full(&part_set.full_image, tree, world)?;
    let matched: f64 = assignment.pair_sims.iter().sum();
    Ok(AlignResult { assignment, pairs, sim_full: full, score: matched + full })
}

/// Hungarian loss of a part set against a phrase tree.
pub fn l_hungarian(part_set: &PartSet, tree: &APTree, world: &World) -> Result<f64> {
    Ok(align(part_set, tree, world)?.score)
}

/// Hungarian loss of a latent at a fixed matching, as a function of the
/// latent only. The finite-difference oracle in the tests perturbs `z`
/// through this.
pub fn l_hungarian_value_fixed(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    let image = unpool(z);
    let template = world.template(tree.category)?;
    let mut total = 0.0;
    for &(part_idx, ap_idx) in pairs {
        let (part, mask) = &template.parts()[part_idx];
        let v = embed_part(&image, mask, *part)?;
        total += sim(&v, &embed_ap(&tree.aps[ap_idx], &world.lexicon));
    }
    total += sim_full(&image, tree, world)?;
    Ok(total)
}

/// Hungarian loss of a latent plus its analytic gradient.
///
/// The matching is recomputed once, then held fixed while differentiating;
/// the chain rule through decoding is the block-replication adjoint.
pub struct HungarianGrad {
    pub value: f64,
    pub gradient: LatentGrid,
    /// The matching the gradient was taken at.
    pub pairs: Vec<(usize, usize)>,
}

pub fn l_hungarian_with_grad(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
) -> Result<HungarianGrad> {
    let image = unpool(z);
    let part_set = segment(&image, tree.category, world)?;
    let aligned = align(&part_set, tree, world)?;
    let template = world.template(tree.category)?;

    let mut image_grad = Image::filled([0.0, 0.0, 0.0]);
    for &(part_idx, ap_idx) in &aligned.pairs {
        let (part, mask) = &template.parts()[part_idx];
        let te = embed_ap(&tree.aps[ap_idx], &world.lexicon);
        crate::sim::accumulate_grad_sim(&image, mask, *part, &te, 1.0, &mut image_grad)?;
    }
    // Full-image term: mean over phrases of each phrase's own region.
    let weight = 1.0 / tree.aps.len() as f64;
    for ap in &tree.aps {
        if let Some(mask) = template.mask_of(ap.part) {
            let te = embed_ap(ap, &world.lexicon);
            crate::sim::accumulate_grad_sim(&image, mask, ap.part, &te, weight, &mut image_grad)?;
        }
    }
    let gradient = fold_gradient(&image_grad);
    if !gradient.is_finite() {
        return Err(Error::NonFinite { context: "hungarian gradient" });
    }
    Ok(HungarianGrad { value: aligned.score, gradient, pairs: aligned.pairs })
}

/// One structural-consensus guidance step: latent ascent on the Hungarian
/// loss, `ẑ = z + α·∇L`.
pub struct GuidedStep {
    pub latent: LatentGrid,
    /// Loss at the input latent.
    pub loss: f64,
    /// L2 norm of the applied shift α·∇L.
    pub shift_norm: f64,
}

pub fn consensus_guidance_step(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
    alpha: f64,
) -> Result<GuidedStep> {
    if alpha == 0.0 {
        let grad = l_hungarian_with_grad(z, tree, world)?;
        return Ok(GuidedStep { latent: z.clone(), loss: grad.value, shift_norm: 0.0 });
    }
    let grad = l_hungarian_with_grad(z, tree, world)?;
    let latent = z.axpy(alpha, &grad.gradient);
    if !latent.is_finite() {
        return Err(Error::NonFinite { context: "consensus guidance step" });
    }
    Ok(GuidedStep { latent, loss: grad.value, shift_norm: alpha * grad.gradient.norm() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::pool;
    use crate::math::GaussianSource;
    use crate::prompt::parse;
    use crate::world::{render, Category, GarmentScene, PartId, PartState, World};

    fn world() -> World {
        World::standard()
    }

    /// Exhaustive permutation minimum (reference oracle).
    fn brute_min(matrix: &CostMatrix) -> f64 {
        fn permute(rest: &mut Vec<usize>, chosen: &mut Vec<usize>, m: &CostMatrix, best: &mut f64) {
            if rest.is_empty() {
                let total: f64 =
                    chosen.iter().enumerate().map(|(r, &c)| m.get(r, c)).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for k in 0..rest.len() {
                let c = rest.remove(k);
                chosen.push(c);
                permute(rest, chosen, m, best);
                chosen.pop();
                rest.insert(k, c);
            }
        }
        let mut best = f64::INFINITY;
        let mut rest: Vec<usize> = (0..matrix.n()).collect();
        permute(&mut rest, &mut Vec::new(), matrix, &mut best);
        best
    }

    #[test]
    fn identity_is_optimal_on_the_obvious_matrix() {
        let m = CostMatrix::from_costs(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let a = hungarian(&m).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn rejects_non_finite_costs() {
        assert!(CostMatrix::from_costs(2, 2, &[0.0, f64::NAN, 1.0, 0.0]).is_err());
        assert!(CostMatrix::from_costs(2, 2, &[0.0, f64::INFINITY, 1.0, 0.0]).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut src = GaussianSource::new(5);
        for n in 1..=6usize {
            for _ in 0..60 {
                let data: Vec<f64> = (0..n * n).map(|_| src.normal() * 3.0).collect();
                let m = CostMatrix::from_costs(n, n, &data).unwrap();
                let a = hungarian(&m).unwrap();
                let expect = brute_min(&m);
                assert!(
                    (a.total_cost - expect).abs() <= 1e-9,
                    "n={n}: got {} want {}",
                    a.total_cost,
                    expect
                );
            }
        }
    }

    #[test]
    fn padding_sends_exactly_one_extra_row_to_a_dummy() {
        // 3 parts, 2 phrases: similarities favor (0,0) and (1,1).
        let sims = [0.9, 0.1, 0.2, 0.8, 0.3, 0.3];
        let m = CostMatrix::from_similarities(3, 2, &sims).unwrap();
        assert_eq!(m.n(), 3);
        let a = hungarian(&m).unwrap();
        assert_eq!(a.dummy.iter().filter(|&&d| d).count(), 1);
        let total: f64 = a.pair_sims.iter().sum();
        // Brute force over the padded matrix.
        assert!((a.total_cost - brute_min(&m)).abs() <= 1e-12);
        assert!((total - 1.7).abs() < 1e-12);
    }

    #[test]
    fn ties_break_to_the_lexicographically_smallest_permutation() {
        let m = CostMatrix::from_costs(3, 3, &[0.0; 9]).unwrap();
        let a = hungarian(&m).unwrap();
        assert_eq!(a.perm, vec![0, 1, 2]);

        // Two optima: (0→1, 1→0) and (0→0, 1→1) both cost 2; prefer the latter.
        let m = CostMatrix::from_costs(2, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(hungarian(&m).unwrap().perm, vec![0, 1]);
    }

    #[test]
    fn constant_shift_leaves_the_argmin_unchanged() {
        let mut src = GaussianSource::new(11);
        for _ in 0..40 {
            let n = 4;
            let data: Vec<f64> = (0..n * n).map(|_| src.normal()).collect();
            let shifted: Vec<f64> = data.iter().map(|c| c + 2.5).collect();
            let a = hungarian(&CostMatrix::from_costs(n, n, &data).unwrap()).unwrap();
            let b = hungarian(&CostMatrix::from_costs(n, n, &shifted).unwrap()).unwrap();
            assert_eq!(a.perm, b.perm);
        }
    }

    fn matched_scene(world: &World) -> (GarmentScene, APTree) {
        let tree = parse("red jacket with blue collar", &world.lexicon).unwrap();
        let scene = GarmentScene {
            category: Category::Jacket,
            parts: alloc::vec![
                PartState { part: PartId::Body, color: [1.0, 0.0, 0.0], length: None, pattern: None },
                PartState { part: PartId::Collar, color: [0.0, 0.0, 1.0], length: None, pattern: None },
            ],
        };
        (scene, tree)
    }

    #[test]
    fn l_hungarian_scores_matching_render_high() {
        let w = world();
        let (scene, tree) = matched_scene(&w);
        let img = render(&scene, &w).unwrap();
        let parts = segment(&img, Category::Jacket, &w).unwrap();
        let score = l_hungarian(&parts, &tree, &w).unwrap();
        let m = tree.aps.len() as f64;
        assert!(score >= m + 0.99 - 0.05, "score {score}");
    }

    #[test]
    fn swapped_colors_score_strictly_lower() {
        let w = world();
        let (scene, tree) = matched_scene(&w);
        let good = render(&scene, &w).unwrap();
        let mut swapped = scene.clone();
        swapped.parts[0].color = [0.0, 0.0, 1.0];
        swapped.parts[1].color = [1.0, 0.0, 0.0];
        let bad = render(&swapped, &w).unwrap();
        let s_good =
            l_hungarian(&segment(&good, Category::Jacket, &w).unwrap(), &tree, &w).unwrap();
        let s_bad =
            l_hungarian(&segment(&bad, Category::Jacket, &w).unwrap(), &tree, &w).unwrap();
        assert!(s_bad < s_good, "{s_bad} !< {s_good}");
    }

    #[test]
    fn single_phrase_score_is_sim_plus_sim_full() {
        let w = world();
        let tree = parse("green sweater", &w.lexicon).unwrap();
        let scene = GarmentScene {
            category: Category::Sweater,
            parts: alloc::vec![PartState {
                part: PartId::Body,
                color: [0.0, 0.6, 0.0],
                length: None,
                pattern: None
            }],
        };
        let img = render(&scene, &w).unwrap();
        let parts = segment(&img, Category::Sweater, &w).unwrap();
        let aligned = align(&parts, &tree, &w).unwrap();
        let body_sim = aligned.pair_sims_of_part(&parts, PartId::Body);
        assert!((aligned.score - (body_sim + aligned.sim_full)).abs() < 1e-12);
    }

    #[test]
    fn phrase_order_does_not_change_the_score() {
        let w = world();
        let a = parse("red jacket with blue collar and green sleeves", &w.lexicon).unwrap();
        let b = parse("green sleeves and blue collar and red jacket", &w.lexicon).unwrap();
        let scene = GarmentScene {
            category: Category::Jacket,
            parts: alloc::vec![
                PartState { part: PartId::Body, color: [1.0, 0.0, 0.0], length: None, pattern: None },
                PartState { part: PartId::Collar, color: [0.0, 0.0, 1.0], length: None, pattern: None },
                PartState { part: PartId::Sleeves, color: [0.0, 0.6, 0.0], length: None, pattern: None },
            ],
        };
        let img = render(&scene, &w).unwrap();
        let parts = segment(&img, Category::Jacket, &w).unwrap();
        let sa = l_hungarian(&parts, &a, &w).unwrap();
        let sb = l_hungarian(&parts, &b, &w).unwrap();
        assert!((sa - sb).abs() <= 1e-12);
    }

    #[test]
    fn zero_alpha_is_bit_exact_identity() {
        let w = world();
        let (_, tree) = matched_scene(&w);
        let mut src = GaussianSource::new(3);
        let mut z = LatentGrid::zeros();
        src.fill_normal(z.raw_mut());
        let step = consensus_guidance_step(&z, &tree, &w, 0.0).unwrap();
        assert_eq!(step.latent, z);
        assert_eq!(step.shift_norm, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_at_fixed_matching() {
        let w = world();
        let (scene, tree) = matched_scene(&w);
        let mut src = GaussianSource::new(17);
        for trial in 0..3 {
            let base = pool(&render(&scene, &w).unwrap());
            let mut z = base.clone();
            for v in z.raw_mut() {
                *v += 0.5 * src.normal();
            }
            let grad = l_hungarian_with_grad(&z, &tree, &w).unwrap();
            let h = 1e-4;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..z.raw().len() {
                let mut plus = z.clone();
                plus.raw_mut()[i] += h;
                let mut minus = z.clone();
                minus.raw_mut()[i] -= h;
                let fd = (l_hungarian_value_fixed(&plus, &tree, &w, &grad.pairs).unwrap()
                    - l_hungarian_value_fixed(&minus, &tree, &w, &grad.pairs).unwrap())
                    / (2.0 * h);
                let a = grad.gradient.raw()[i];
                num += (a - fd) * (a - fd);
                den += fd * fd;
            }
            let rel = crate::math::sqrt(num) / crate::math::sqrt(den).max(1e-12);
            assert!(rel <= 1e-4, "trial {trial}: rel err {rel}");
        }
    }

    #[test]
    fn small_ascent_steps_do_not_decrease_the_loss() {
        let w = world();
        let (scene, tree) = matched_scene(&w);
        let mut src = GaussianSource::new(29);
        let mut ok = 0;
        let trials = 20;
        for _ in 0..trials {
            let mut z = pool(&render(&scene, &w).unwrap());
            for v in z.raw_mut() {
                *v += 0.8 * src.normal();
            }
            let before = l_hungarian_with_grad(&z, &tree, &w).unwrap().value;
            let stepped = consensus_guidance_step(&z, &tree, &w, 1e-2).unwrap();
            let after = l_hungarian_with_grad(&stepped.latent, &tree, &w).unwrap().value;
            if after >= before - 1e-6 {
                ok += 1;
            }
        }
        assert!(ok >= trials * 95 / 100, "ascent held in {ok}/{trials}");
    }
}

#[cfg(test)]
impl AlignResult {
    /// Similarity the matching gave to a specific part (test helper).
    fn pair_sims_of_part(&self, parts: &PartSet, part: crate::world::PartId) -> f64 {
        let idx = parts.parts.iter().position(|v| v.part == part).unwrap();
        self.assignment.pair_sims[idx]
    }
}
