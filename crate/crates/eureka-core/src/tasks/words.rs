//! Word pools for the linguistic tasks, shipped as data files.
//!
//! Each pool is split in half: the first half is the training sub-pool,
//! the second half the evaluation sub-pool, so trained models never see
//! evaluation content words.

use alloc::string::String;
use alloc::vec::Vec;

const NOUNS: &str = include_str!("../../data/nouns.txt");
const VERBS: &str = include_str!("../../data/verbs.txt");
const ADJECTIVES: &str = include_str!("../../data/adjectives.txt");
const CITIES: &str = include_str!("../../data/cities.txt");
const ANIMALS: &str = include_str!("../../data/animals.txt");

/// A verb with the two inflected forms the templates use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbForms {
    pub ing: String,
    pub past: String,
}

fn lines(data: &str) -> Vec<&str> {
    data.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

pub fn nouns() -> Vec<String> {
    lines(NOUNS).into_iter().map(String::from).collect()
}

pub fn adjectives() -> Vec<String> {
    lines(ADJECTIVES).into_iter().map(String::from).collect()
}

pub fn cities() -> Vec<String> {
    lines(CITIES).into_iter().map(String::from).collect()
}

pub fn animals() -> Vec<String> {
    lines(ANIMALS).into_iter().map(String::from).collect()
}

/// Verb file lines are `base ing past`; only the inflected forms are used.
pub fn verbs() -> Vec<VerbForms> {
    lines(VERBS)
        .into_iter()
        .map(|l| {
            let mut parts = l.split_whitespace();
            let _base = parts.next().expect("verb line");
            let ing = parts.next().expect("ing form");
            let past = parts.next().expect("past form");
            VerbForms {
                ing: String::from(ing),
                past: String::from(past),
            }
        })
        .collect()
}

/// Capitalises the first letter; pools are ASCII lowercase.
pub fn title_case(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    let mut chars = word.chars();
    if let Some(c) = chars.next() {
        out.push(c.to_ascii_uppercase());
    }
    out.extend(chars);
    out
}

/// Splits a pool in half: training first, evaluation second.
pub fn split_half<T: Clone>(pool: &[T], eval: bool) -> Vec<T> {
    let mid = pool.len() / 2;
    if eval {
        pool[mid..].to_vec()
    } else {
        pool[..mid].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_sizes() {
        assert_eq!(nouns().len(), 20);
        assert_eq!(verbs().len(), 10);
        assert_eq!(adjectives().len(), 10);
        assert_eq!(cities().len(), 10);
        assert_eq!(animals().len(), 10);
    }

    #[test]
    fn split_halves_are_disjoint() {
        let all = nouns();
        let train = split_half(&all, false);
        let eval = split_half(&all, true);
        assert_eq!(train.len() + eval.len(), all.len());
        assert!(train.iter().all(|w| !eval.contains(w)));
    }

    #[test]
    fn title_case_basics() {
        assert_eq!(title_case("dog"), "Dog");
        assert_eq!(title_case("big"), "Big");
    }
}
