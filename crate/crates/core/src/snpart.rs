//! Partition and standard-tableau combinatorics.
//!
//! Partitions label both the irreducible representations of `S_n` and the
//! charge sectors of an `n`-qudit register. Everything here is exact
//! integer arithmetic; dimensions and multiplicities report overflow instead
//! of wrapping.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weakly decreasing tuple of positive integers.
///
/// Zero parts are dropped on construction, so `(4, 0)` and `(4)` are the
/// same value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    parts: Vec<usize>,
    n: usize,
}

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        let trimmed: Vec<usize> = parts.iter().copied().filter(|&p| p > 0).collect();
        if trimmed.is_empty() {
            return Err(Error::InvalidPartition {
                parts,
                reason: "a partition needs at least one box",
            });
        }
        if trimmed.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidPartition {
                parts,
                reason: "parts must be weakly decreasing",
            });
        }
        // Zeros are only allowed as trailing padding.
        if let Some(first_zero) = parts.iter().position(|&p| p == 0) {
            if parts[first_zero..].iter().any(|&p| p > 0) {
                return Err(Error::InvalidPartition {
                    parts,
                    reason: "zero parts may only appear at the end",
                });
            }
        }
        let n = trimmed.iter().sum();
        Ok(Self { parts: trimmed, n })
    }

    /// Like [`Partition::new`] but additionally enforces at most `max_rows` rows.
    pub fn with_row_bound(parts: Vec<usize>, max_rows: usize) -> Result<Self> {
        let p = Self::new(parts)?;
        if p.rows() > max_rows {
            return Err(Error::InvalidPartition {
                parts: p.parts,
                reason: "more rows than the row bound allows",
            });
        }
        Ok(p)
    }

    /// The one-row shape `(n)`.
    pub fn trivial(n: usize) -> Self {
        Self { parts: vec![n], n }
    }

    /// The one-column shape `(1, ..., 1)`.
    pub fn sign(n: usize) -> Self {
        Self {
            parts: vec![1; n],
            n,
        }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    /// Number of boxes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.parts.len()
    }

    pub fn columns(&self) -> usize {
        self.parts[0]
    }

    /// Boxes as `(row, column)` pairs, row-major, zero based.
    pub fn boxes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parts
            .iter()
            .enumerate()
            .flat_map(|(r, &len)| (0..len).map(move |c| (r, c)))
    }

    /// Contents `column - row` of every box, row-major.
    pub fn box_contents(&self) -> Vec<i64> {
        self.boxes().map(|(r, c)| c as i64 - r as i64).collect()
    }

    pub fn conjugate(&self) -> Self {
        let cols = self.columns();
        let parts: Vec<usize> = (0..cols)
            .map(|c| self.parts.iter().filter(|&&p| p > c).count())
            .collect();
        Self { parts, n: self.n }
    }

    pub fn is_self_conjugate(&self) -> bool {
        *self == self.conjugate()
    }

    /// Hook length of the box at `(row, col)`.
    pub fn hook(&self, row: usize, col: usize) -> usize {
        let arm = self.parts[row] - col - 1;
        let leg = self.parts[row + 1..].iter().filter(|&&p| p > col).count();
        arm + leg + 1
    }

    /// Rows whose last box can be removed, bottom row first.
    pub fn removable_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .rev()
            .filter(|&r| r + 1 == self.rows() || self.parts[r] > self.parts[r + 1])
            .collect()
    }

    /// The shape with the last box of `row` removed; `None` if that leaves no boxes.
    pub fn remove_box(&self, row: usize) -> Option<Self> {
        let mut parts = self.parts.clone();
        parts[row] -= 1;
        if parts[row] == 0 {
            parts.truncate(row);
        }
        if parts.is_empty() {
            None
        } else {
            Some(Self {
                parts,
                n: self.n - 1,
            })
        }
    }
}

/// Lexicographic comparison of the parts. Reverse-lexicographic order is the
/// descending order under this comparison.
impl Ord for Partition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.parts.cmp(&other.parts)
    }
}

impl PartialOrd for Partition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for Partition {
    type Err = Error;

    /// Accepts `3,2,1`, `(3,2,1)` or `3 2 1`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!("bad partition part {t:?} in {s:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;

    fn try_from(parts: Vec<usize>) -> Result<Self> {
        Self::new(parts)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Self {
        p.parts
    }
}

/// Per-box contents of a tableau: `values[j]` is the content of the box holding `j + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ContentVector(pub Vec<i64>);

impl ContentVector {
    pub fn values(&self) -> &[i64] {
        &self.0
    }
}

/// A standard filling of a partition shape with `1..=n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StandardTableau {
    shape: Partition,
    rows: Vec<Vec<usize>>,
    /// `(row, column)` of entry `j + 1`.
    positions: Vec<(usize, usize)>,
}

impl StandardTableau {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let shape = Partition::new(rows.iter().map(Vec::len).collect())
            .map_err(|e| Error::InvalidTableau(e.to_string()))?;
        let n = shape.n();
        let mut positions = vec![None; n];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v == 0 || v > n {
                    return Err(Error::InvalidTableau(format!("entry {v} outside 1..={n}")));
                }
                if positions[v - 1].replace((r, c)).is_some() {
                    return Err(Error::InvalidTableau(format!("entry {v} repeated")));
                }
                if c > 0 && row[c - 1] >= v {
                    return Err(Error::InvalidTableau(format!("row {r} not increasing")));
                }
                if r > 0 && rows[r - 1][c] >= v {
                    return Err(Error::InvalidTableau(format!("column {c} not increasing")));
                }
            }
        }
        let positions = positions
            .into_iter()
            .map(|p| p.expect("all entries placed"))
            .collect();
        Ok(Self {
            shape,
            rows,
            positions,
        })
    }

    fn from_positions(shape: &Partition, positions: Vec<(usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = shape.parts().iter().map(|&p| vec![0; p]).collect();
        for (j, &(r, c)) in positions.iter().enumerate() {
            rows[r][c] = j + 1;
        }
        Self {
            shape: shape.clone(),
            rows,
            positions,
        }
    }

    pub fn shape(&self) -> &Partition {
        &self.shape
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// `(row, column)` of the box holding `entry` (1-based entry).
    pub fn position(&self, entry: usize) -> (usize, usize) {
        self.positions[entry - 1]
    }

    /// Row index of each entry `1..=n`; identifies the tableau within its shape.
    pub fn row_word(&self) -> Vec<u8> {
        self.positions.iter().map(|&(r, _)| r as u8).collect()
    }

    /// The tableau with entries `j` and `j + 1` exchanged, if still standard.
    pub fn swap_adjacent(&self, j: usize) -> Option<Self> {
        let mut positions = self.positions.clone();
        positions.swap(j - 1, j);
        let (ra, ca) = positions[j - 1];
        let (rb, cb) = positions[j];
        // j now sits at (ra, ca) and j+1 at (rb, cb); standard iff they share neither row nor column.
        if ra == rb || ca == cb {
            return None;
        }
        Some(Self::from_positions(&self.shape, positions))
    }
}

/// All partitions of `n` with at most `max_rows` rows, reverse-lexicographic.
pub fn partitions(n: usize, max_rows: usize) -> Vec<Partition> {
    fn rec(
        remaining: usize,
        max_part: usize,
        rows_left: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            out.push(prefix.clone());
            return;
        }
        if rows_left == 0 {
            return;
        }
        for p in (1..=remaining.min(max_part)).rev() {
            prefix.push(p);
            rec(remaining - p, p, rows_left - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 || max_rows == 0 {
        return Vec::new();
    }
    rec(n, n, max_rows, &mut Vec::new(), &mut out);
    out.into_iter()
        .map(|parts| Partition { parts, n })
        .collect()
}

/// Number of partitions of `n` with at most `d` rows (the number of charge sectors).
pub fn count_sectors(n: usize, d: usize) -> u64 {
    // p(m, j) = partitions of m into parts of size at most j (conjugate to at most j rows).
    let mut table = vec![0u64; n + 1];
    table[0] = 1;
    for part in 1..=d.min(n) {
        for m in part..=n {
            table[m] += table[m - part];
        }
    }
    table[n]
}

/// Exponent map of a rational number given as a product of small integers.
#[derive(Default)]
struct PrimeExponents(BTreeMap<u64, i64>);

impl PrimeExponents {
    fn add(&mut self, mut x: u64, sign: i64) {
        let mut p = 2;
        while p * p <= x {
            while x % p == 0 {
                *self.0.entry(p).or_default() += sign;
                x /= p;
            }
            p += 1;
        }
        if x > 1 {
            *self.0.entry(x).or_default() += sign;
        }
    }

    fn into_integer(self, what: &'static str) -> Result<u64> {
        let mut acc: u64 = 1;
        for (p, e) in self.0 {
            if e < 0 {
                // Only reachable if the formula were wrong for this shape.
                return Err(Error::InvalidArgument(format!("{what} is not an integer")));
            }
            for _ in 0..e {
                acc = acc.checked_mul(p).ok_or(Error::Overflow(what))?;
            }
        }
        Ok(acc)
    }
}

/// Dimension of the irrep `S^lambda` by the hook-length formula.
pub fn dim_irrep(lambda: &Partition) -> Result<u64> {
    let mut ex = PrimeExponents::default();
    for i in 2..=lambda.n() as u64 {
        ex.add(i, 1);
    }
    for (r, c) in lambda.boxes() {
        ex.add(lambda.hook(r, c) as u64, -1);
    }
    ex.into_integer("irrep dimension")
}

/// Number of semistandard tableaux of shape `lambda` with entries in `1..=d`
/// (hook-content formula). Zero when `lambda` has more than `d` rows.
pub fn multiplicity(lambda: &Partition, d: usize) -> Result<u64> {
    if lambda.rows() > d {
        return Ok(0);
    }
    let mut ex = PrimeExponents::default();
    for (r, c) in lambda.boxes() {
        let num = d as i64 + c as i64 - r as i64;
        debug_assert!(num > 0);
        ex.add(num as u64, 1);
        ex.add(lambda.hook(r, c) as u64, -1);
    }
    ex.into_integer("sector multiplicity")
}

/// All standard tableaux of a shape in last-letter order.
///
/// The tableau with `n` in the lowest removable row comes first; ties are
/// broken by the position of `n - 1`, and so on. Tableaux sharing the
/// position of `n` are contiguous, so the first `n - 2` adjacent
/// transpositions are block diagonal along the branching `S_n -> S_{n-1}`.
pub fn standard_tableaux(lambda: &Partition) -> Vec<StandardTableau> {
    fn rec(shape: &Partition) -> Vec<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for row in shape.removable_rows() {
            let corner = (row, shape.parts()[row] - 1);
            match shape.remove_box(row) {
                None => out.push(vec![corner]),
                Some(smaller) => {
                    for mut pos in rec(&smaller) {
                        pos.push(corner);
                        out.push(pos);
                    }
                }
            }
        }
        out
    }
    rec(lambda)
        .into_iter()
        .map(|pos| StandardTableau::from_positions(lambda, pos))
        .collect()
}

/// Content vector of a tableau.
pub fn contents(t: &StandardTableau) -> ContentVector {
    ContentVector(
        t.positions
            .iter()
            .map(|&(r, c)| c as i64 - r as i64)
            .collect(),
    )
}

/// Restriction of `S^lambda` from `S_n` to `S_m`: each shape of `m` boxes
/// with the number of corner-removal chains reaching it. Reverse-lexicographic.
pub fn branch_restrict(lambda: &Partition, m: usize) -> Result<Vec<(Partition, u64)>> {
    if m == 0 || m > lambda.n() {
        return Err(Error::InvalidArgument(format!(
            "restriction target m = {m} must lie in 1..={}",
            lambda.n()
        )));
    }
    let mut level: BTreeMap<Partition, u64> = BTreeMap::from([(lambda.clone(), 1)]);
    for _ in m..lambda.n() {
        let mut next = BTreeMap::new();
        for (shape, count) in level {
            for row in shape.removable_rows() {
                let smaller = shape.remove_box(row).expect("m >= 1 keeps a box");
                *next.entry(smaller).or_insert(0) += count;
            }
        }
        level = next;
    }
    Ok(level.into_iter().rev().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(parts: &[usize]) -> Partition {
        Partition::new(parts.to_vec()).unwrap()
    }

    /// Brute force: fill boxes with a permutation of 1..n and keep the standard ones.
    fn brute_force_syt_count(lambda: &Partition) -> usize {
        fn rec(shape: &Partition, filled: &mut Vec<usize>, next: usize, count: &mut usize) {
            if next > shape.n() {
                *count += 1;
                return;
            }
            // next goes in any row whose next free cell has its upper neighbor filled.
            for r in 0..shape.rows() {
                let c = filled[r];
                if c < shape.parts()[r] && (r == 0 || filled[r - 1] > c) {
                    filled[r] += 1;
                    rec(shape, filled, next + 1, count);
                    filled[r] -= 1;
                }
            }
        }
        let mut count = 0;
        rec(lambda, &mut vec![0; lambda.rows()], 1, &mut count);
        count
    }

    /// Brute force semistandard count: rows weakly increase, columns strictly.
    fn brute_force_ssyt(lambda: &Partition, d: usize) -> u64 {
        let cells: Vec<(usize, usize)> = lambda.boxes().collect();
        fn rec(cells: &[(usize, usize)], i: usize, grid: &mut Vec<Vec<usize>>, d: usize) -> u64 {
            if i == cells.len() {
                return 1;
            }
            let (r, c) = cells[i];
            let lo_row = if c > 0 { grid[r][c - 1] } else { 1 };
            let lo_col = if r > 0 { grid[r - 1][c] + 1 } else { 1 };
            let mut total = 0;
            for v in lo_row.max(lo_col)..=d {
                grid[r][c] = v;
                total += rec(cells, i + 1, grid, d);
            }
            grid[r][c] = 0;
            total
        }
        let mut grid: Vec<Vec<usize>> = lambda.parts().iter().map(|&l| vec![0; l]).collect();
        rec(&cells, 0, &mut grid, d)
    }

    #[test]
    fn partitions_reverse_lex() {
        assert_eq!(partitions(4, 2), vec![p(&[4]), p(&[3, 1]), p(&[2, 2])]);
        assert_eq!(partitions(3, 3), vec![p(&[3]), p(&[2, 1]), p(&[1, 1, 1])]);
        assert_eq!(partitions(6, 2).len(), 4);
        assert_eq!(partitions(5, 5).len(), 7);
    }

    #[test]
    fn partition_normalizes_zero_padding() {
        assert_eq!(p(&[4, 0]), p(&[4]));
        assert!(Partition::new(vec![0, 4]).is_err());
        assert!(Partition::new(vec![1, 2]).is_err());
        assert!(Partition::new(vec![]).is_err());
        assert!(Partition::with_row_bound(vec![1, 1, 1], 2).is_err());
        assert_eq!("(3,2,1)".parse::<Partition>().unwrap(), p(&[3, 2, 1]));
        assert_eq!(p(&[3, 2, 1]).to_string(), "(3,2,1)");
    }

    #[test]
    fn hook_length_dimensions() {
        assert_eq!(dim_irrep(&p(&[5])).unwrap(), 1);
        assert_eq!(dim_irrep(&p(&[2, 1])).unwrap(), 2);
        assert_eq!(dim_irrep(&p(&[3, 2, 1])).unwrap(), 16);
        assert_eq!(dim_irrep(&p(&[4, 3])).unwrap(), 14);
        for n in 1..=8 {
            for lambda in partitions(n, n) {
                assert_eq!(
                    dim_irrep(&lambda).unwrap() as usize,
                    brute_force_syt_count(&lambda)
                );
            }
        }
    }

    #[test]
    fn dimension_overflow_is_reported() {
        // dim of (25,25,25,25) is far beyond u64.
        let big = p(&[25, 25, 25, 25]);
        assert!(matches!(dim_irrep(&big), Err(Error::Overflow(_))));
    }

    #[test]
    fn tableaux_in_last_letter_order() {
        let ts = standard_tableaux(&p(&[2, 1]));
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].rows(), &[vec![1, 2], vec![3]]);
        assert_eq!(ts[1].rows(), &[vec![1, 3], vec![2]]);
        assert_eq!(standard_tableaux(&p(&[1, 1, 1])).len(), 1);
        assert_eq!(standard_tableaux(&p(&[2, 2])).len(), 2);
        for n in 1..=8 {
            for lambda in partitions(n, n) {
                let ts = standard_tableaux(&lambda);
                assert_eq!(ts.len() as u64, dim_irrep(&lambda).unwrap());
                for t in &ts {
                    // Round trip through the validating constructor.
                    assert_eq!(StandardTableau::from_rows(t.rows().to_vec()).unwrap(), *t);
                }
            }
        }
    }

    #[test]
    fn tableau_validation() {
        assert!(StandardTableau::from_rows(vec![vec![2, 1]]).is_err());
        assert!(StandardTableau::from_rows(vec![vec![1, 3], vec![3]]).is_err());
        assert!(StandardTableau::from_rows(vec![vec![1, 2], vec![4]]).is_err());
        assert!(StandardTableau::from_rows(vec![vec![2, 3], vec![1]]).is_err());
    }

    #[test]
    fn content_vectors() {
        let ts = standard_tableaux(&p(&[2, 1]));
        assert_eq!(contents(&ts[0]).values(), &[0, 1, -1]);
        assert_eq!(contents(&ts[1]).values(), &[0, -1, 1]);
        let row = &standard_tableaux(&p(&[4]))[0];
        assert_eq!(contents(row).values(), &[0, 1, 2, 3]);
    }

    #[test]
    fn content_multiset_is_shape_determined() {
        for n in 1..=7 {
            for lambda in partitions(n, n) {
                let mut shape_contents = lambda.box_contents();
                shape_contents.sort_unstable();
                for t in standard_tableaux(&lambda) {
                    let cv = contents(&t);
                    assert_eq!(cv.values()[0], 0);
                    let mut sorted = cv.0.clone();
                    sorted.sort_unstable();
                    assert_eq!(sorted, shape_contents);
                }
            }
        }
    }

    #[test]
    fn multiplicities() {
        assert_eq!(multiplicity(&p(&[1, 1, 1]), 2).unwrap(), 0);
        assert_eq!(multiplicity(&p(&[2, 1]), 2).unwrap(), 2);
        assert_eq!(multiplicity(&p(&[3]), 2).unwrap(), 4);
        for n in 1..=6 {
            for lambda in partitions(n, n) {
                for d in 1..=4 {
                    assert_eq!(
                        multiplicity(&lambda, d).unwrap(),
                        brute_force_ssyt(&lambda, d)
                    );
                }
            }
        }
    }

    #[test]
    fn schur_weyl_dimension_identity() {
        for d in 1..=3usize {
            for n in 1..=8usize {
                let total: u64 = partitions(n, d)
                    .iter()
                    .map(|l| multiplicity(l, d).unwrap() * dim_irrep(l).unwrap())
                    .sum();
                assert_eq!(total, (d as u64).pow(n as u32), "n={n} d={d}");
            }
        }
    }

    #[test]
    fn branching() {
        assert_eq!(
            branch_restrict(&p(&[3, 1]), 3).unwrap(),
            vec![(p(&[3]), 1), (p(&[2, 1]), 1)]
        );
        assert_eq!(
            branch_restrict(&p(&[2, 2]), 3).unwrap(),
            vec![(p(&[2, 1]), 1)]
        );
        assert_eq!(
            branch_restrict(&p(&[3, 2]), 5).unwrap(),
            vec![(p(&[3, 2]), 1)]
        );
        assert!(branch_restrict(&p(&[3, 2]), 0).is_err());
        assert!(branch_restrict(&p(&[3, 2]), 6).is_err());
        for n in 1..=7 {
            for lambda in partitions(n, n) {
                for m in 1..=n {
                    let total: u64 = branch_restrict(&lambda, m)
                        .unwrap()
                        .iter()
                        .map(|(mu, c)| c * dim_irrep(mu).unwrap())
                        .sum();
                    assert_eq!(total, dim_irrep(&lambda).unwrap());
                }
            }
        }
    }

    #[test]
    fn sector_counts() {
        assert_eq!(count_sectors(6, 2), 4);
        assert_eq!(count_sectors(2, 1), 1);
        assert_eq!(count_sectors(3, 3), 3);
        for n in 1..=30 {
            assert_eq!(count_sectors(n, 2), (n / 2 + 1) as u64);
        }
        for n in 1..=10 {
            for d in 1..=4 {
                assert_eq!(count_sectors(n, d), partitions(n, d).len() as u64);
            }
        }
    }

    #[test]
    fn conjugation() {
        assert_eq!(p(&[3, 1]).conjugate(), p(&[2, 1, 1]));
        assert!(p(&[3, 2, 1]).is_self_conjugate());
        assert!(!p(&[3, 1]).is_self_conjugate());
    }
}
