use std::collections::BTreeMap;

use super::clique::{compatibility_cliques, greedy_clique, CLIQUE_EXACT_MAX};
use super::{AugmentationPlan, GapTable, Residual};
use crate::patterns::{AttributeSchema, Combination, InvertedIndex, MupSet, Pattern};

/// Complete a partial pattern into a combination, one free attribute at a time in
/// attribute order, choosing the value with the largest dataset count for the
/// pattern built so far (ties to the smaller value).
pub fn fill_combination(partial: &Pattern, index: &InvertedIndex) -> Combination {
    let cards = index.cardinalities();
    let mut current = partial.clone();
    for (attr, &card) in cards.iter().enumerate() {
        if current.get(attr).is_some() {
            continue;
        }
        let mut best = (0usize, 0usize);
        for value in 0..card {
            let count = index.coverage_count(&current.with(attr, Some(value)));
            if value == 0 || count > best.1 {
                best = (value, count);
            }
        }
        current = current.with(attr, Some(best.0));
    }
    current
}

/// The combination chosen at one greedy step, and whether the clique was approximate.
///
/// Preference: most matched MUPs, then a combination already in `sigma`, then the
/// lexicographically smallest cells.
pub(crate) fn best_step(
    remaining: &[Pattern],
    index: &InvertedIndex,
    sigma: &BTreeMap<Pattern, u64>,
) -> (Combination, bool) {
    let matched = |c: &Pattern| remaining.iter().filter(|m| c.refines(m)).count();
    let meet_all = |members: &[usize]| {
        members
            .iter()
            .try_fold(Pattern::root(index.arity()), |acc, &i| {
                acc.meet(&remaining[i])
            })
            .expect("clique members are jointly compatible")
    };

    if remaining.len() <= CLIQUE_EXACT_MAX {
        let cliques = compatibility_cliques(remaining, true);
        let best_size = cliques[0].len();
        if let Some(existing) = sigma.keys().find(|c| matched(c) == best_size) {
            return (existing.clone(), false);
        }
        let choice = cliques
            .iter()
            .map(|cl| fill_combination(&meet_all(cl), index))
            .min()
            .expect("at least one clique");
        (choice, false)
    } else {
        let clique = greedy_clique(remaining);
        let filled = fill_combination(&meet_all(&clique), index);
        let size = matched(&filled);
        let existing = sigma
            .keys()
            .map(|c| (matched(c), c))
            .filter(|(n, _)| *n >= size)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(a.1)));
        match existing {
            Some((_, c)) => (c.clone(), true),
            None => (filled, true),
        }
    }
}

/// A combination matching the largest number of MUPs in `mstar`.
pub fn max_matching_combination(
    mstar: &MupSet,
    schema: &AttributeSchema,
    index: &InvertedIndex,
) -> Combination {
    debug_assert_eq!(schema.arity(), index.arity());
    assert!(!mstar.is_empty(), "mstar must be nonempty");
    best_step(&mstar.mups, index, &BTreeMap::new()).0
}

/// GREEDY combination selection.
///
/// Repeatedly picks the combination matching most remaining MUPs, adds the
/// smallest remaining gap `γ` among the matched MUPs to its count, subtracts `γ`
/// from every matched gap, and drops MUPs whose gap reaches zero.
pub fn greedy_plan(
    mstar: &MupSet,
    gaps: &GapTable,
    schema: &AttributeSchema,
    index: &InvertedIndex,
) -> AugmentationPlan {
    debug_assert_eq!(schema.arity(), index.arity());
    let mut residual = Residual::from_table(&gaps.restricted_to(mstar));
    let mut plan = AugmentationPlan::default();
    while !residual.is_empty() {
        let (c, approximate) = best_step(&residual.mups, index, &plan.sigma);
        plan.approximate_clique |= approximate;
        let gamma = residual
            .mups
            .iter()
            .zip(&residual.gaps)
            .filter(|(m, _)| c.refines(m))
            .map(|(_, &g)| g)
            .min()
            .expect("chosen combination matches at least one MUP");
        plan.add(c.clone(), gamma);
        residual.serve(&c, gamma);
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{Attribute, Dataset, TupleRecord};

    fn binary_schema(d: usize) -> AttributeSchema {
        AttributeSchema::with_default_template(
            (0..d)
                .map(|i| Attribute::new(format!("x{i}"), false, &["0", "1"]))
                .collect(),
        )
        .unwrap()
    }

    fn index_of(schema: &AttributeSchema, rows: &[Vec<usize>]) -> InvertedIndex {
        let tuples = rows
            .iter()
            .enumerate()
            .map(|(i, r)| TupleRecord::new(format!("t{i}"), r.clone(), vec![0.0]))
            .collect();
        InvertedIndex::build(&Dataset::new(schema.clone(), tuples).unwrap())
    }

    fn table(entries: &[(&str, u64)]) -> (MupSet, GapTable) {
        let mups = MupSet::new(0, entries.iter().map(|(p, _)| p.parse().unwrap()).collect());
        let gaps = GapTable::new(
            0,
            entries
                .iter()
                .map(|(p, g)| (p.parse().unwrap(), *g))
                .collect(),
        );
        (mups, gaps)
    }

    #[test]
    fn two_compatible_mups_share_one_combination() {
        let schema = binary_schema(2);
        let idx = index_of(&schema, &[]);
        let (m, g) = table(&[("1X", 2), ("X1", 3)]);
        let plan = greedy_plan(&m, &g, &schema, &idx);
        assert_eq!(plan.sigma.get(&"11".parse().unwrap()), Some(&3));
        assert_eq!(plan.total, 3);
        assert!(plan.is_feasible(&g));
    }

    #[test]
    fn single_mup_single_combination() {
        let schema = binary_schema(3);
        let idx = index_of(&schema, &[vec![0, 1, 1], vec![0, 1, 0], vec![1, 1, 1]]);
        let (m, g) = table(&[("0XX", 5)]);
        let plan = greedy_plan(&m, &g, &schema, &idx);
        assert_eq!(plan.sigma.len(), 1);
        assert_eq!(plan.total, 5);
        // free cells follow the most populated branch: 0 -> 01 (2 tuples) -> 010 vs 011 tie -> 010
        assert_eq!(plan.sigma.keys().next().unwrap().to_string(), "010");
    }

    #[test]
    fn max_matching_examples() {
        let schema = binary_schema(3);
        let idx = index_of(&schema, &[]);
        let both = MupSet::new(0, vec!["1XX".parse().unwrap(), "X1X".parse().unwrap()]);
        let c = max_matching_combination(&both, &schema, &idx);
        assert!(c.to_string().starts_with("11"));
        let conflict = MupSet::new(0, vec!["0XX".parse().unwrap(), "1XX".parse().unwrap()]);
        let c = max_matching_combination(&conflict, &schema, &idx);
        assert_eq!(conflict.iter().filter(|m| c.refines(m)).count(), 1);
    }

    #[test]
    fn reuses_existing_combination_on_tie() {
        let schema = binary_schema(2);
        let idx = index_of(&schema, &[vec![1, 1]]);
        let remaining: Vec<Pattern> = vec!["X0".parse().unwrap()];
        let mut sigma = BTreeMap::new();
        sigma.insert("10".parse().unwrap(), 1);
        // without reuse the fill rule would pick "10" anyway by count? no: counts of 00/10 are both 0 -> "00"
        assert_eq!(
            best_step(&remaining, &idx, &BTreeMap::new()).0.to_string(),
            "00"
        );
        assert_eq!(best_step(&remaining, &idx, &sigma).0.to_string(), "10");
    }
}
