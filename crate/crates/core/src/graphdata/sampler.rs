use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewTag {
    Original,
    Augmented,
}

/// Indices into a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub graph_indices: Vec<usize>,
    pub view_tag: ViewTag,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.graph_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph_indices.is_empty()
    }
}

/// Uniform over graphs: draws without replacement from a shuffled epoch
/// permutation, reshuffling when it runs out.
#[derive(Clone, Debug)]
pub struct InstanceSampler {
    n: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl InstanceSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidState("instance sampler over an empty dataset".into()));
        }
        Ok(Self {
            n: dataset.len(),
            perm: Vec::new(),
            pos: 0,
        })
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.perm.len() {
                self.perm = (0..self.n).collect();
                self.perm.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        Ok(Batch {
            graph_indices: out,
            view_tag: ViewTag::Original,
        })
    }

    /// One pass over a fresh permutation in `ceil(N / batch_size)` batches;
    /// the last one may be short.
    pub fn epoch<R: Rng + ?Sized>(&mut self, batch_size: usize, rng: &mut R) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(rng);
        Ok(perm
            .chunks(batch_size)
            .map(|c| Batch {
                graph_indices: c.to_vec(),
                view_tag: ViewTag::Original,
            })
            .collect())
    }
}

/// Uniform over classes, then uniform within the class, with replacement.
#[derive(Clone, Debug)]
pub struct ClassSampler {
    members: Vec<Vec<usize>>,
}

impl ClassSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let members = dataset.class_members();
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidState(format!("class {c} has no samples")));
        }
        Ok(Self { members })
    }

    pub fn next_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let graph_indices = (0..batch_size)
            .map(|_| {
                let c = rng.random_range(0..self.members.len());
                let m = &self.members[c];
                m[rng.random_range(0..m.len())]
            })
            .collect();
        Ok(Batch {
            graph_indices,
            view_tag: ViewTag::Original,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ds(counts: &[usize]) -> Dataset {
        let mut graphs = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                graphs.push(Graph::new(vec![0.0], 1, vec![], c).unwrap());
            }
        }
        Dataset::new(graphs, counts.len()).unwrap()
    }

    #[test]
    fn single_graph_batch() {
        let d = ds(&[1]);
        let mut s = InstanceSampler::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.next_batch(1, &mut rng).unwrap().graph_indices, vec![0]);
    }

    #[test]
    fn seeded_sequences_repeat() {
        let d = ds(&[10, 5]);
        let run = || {
            let mut s = InstanceSampler::new(&d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| s.next_batch(4, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epoch_is_a_permutation() {
        let d = ds(&[7, 3]);
        let mut s = InstanceSampler::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all: Vec<usize> = s.epoch(4, &mut rng).unwrap().into_iter().flat_map(|b| b.graph_indices).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(ClassSampler::new(&ds(&[3, 0])), Err(Error::InvalidState(_))));
    }

    #[test]
    fn single_class_degenerates_to_instance_sampling() {
        let d = ds(&[4]);
        let s = ClassSampler::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = s.next_batch(1000, &mut rng).unwrap();
        let mut hist = [0usize; 4];
        b.graph_indices.iter().for_each(|&i| hist[i] += 1);
        assert!(hist.iter().all(|&h| (200..300).contains(&h)), "{hist:?}");
    }
}
