//! Seeded two-cluster fixtures for tests, demos and smoke runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::features::AuxField;
use crate::ingest::{AuxCounts, Dataset, EmbeddingMatrix, EmbeddingStore, Label, UserRecord};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusters {
    pub users: usize,
    pub dim: usize,
    /// Distance between the class centres along axis 0, in noise standard deviations.
    pub separation: f64,
    pub tweets_per_user: usize,
    /// Attach profile counts to every user.
    pub with_aux: bool,
    /// Move all class signal into this count; embeddings then share one centre.
    pub aux_signal: Option<AuxField>,
    pub seed: u64,
}

impl Default for TwoClusters {
    fn default() -> Self {
        TwoClusters {
            users: 500,
            dim: 16,
            separation: 6.0,
            tweets_per_user: 1,
            with_aux: true,
            aux_signal: None,
            seed: 7,
        }
    }
}

impl TwoClusters {
    /// Balanced labels in shuffled order.
    fn labels(&self, rng: &mut ChaCha8Rng) -> Vec<Label> {
        let mut labels: Vec<Label> = (0..self.users)
            .map(|i| if i < self.users / 2 { Label::Human } else { Label::Bot })
            .collect();
        labels.shuffle(rng);
        labels
    }

    fn centre(&self, label: Label) -> f64 {
        if self.aux_signal.is_some() {
            return 0.0;
        }
        match label {
            Label::Human => -self.separation / 2.0,
            Label::Bot => self.separation / 2.0,
        }
    }

    fn point(&self, label: Label, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        v[0] += self.centre(label);
        v
    }

    /// Feature rows drawn directly, one per user, bypassing featurization.
    pub fn features(&self) -> (Matrix, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let labels = self.labels(&mut rng);
        let mut data = Vec::with_capacity(self.users * self.dim);
        for &l in &labels {
            data.extend(self.point(l, &mut rng));
        }
        (Matrix::from_vec(self.users, self.dim, data).expect("sized"), labels)
    }

    /// A labeled dataset with matching tweet embeddings.
    pub fn dataset(&self) -> Result<(Dataset, EmbeddingStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let labels = self.labels(&mut rng);
        let mut store = EmbeddingStore::new(self.dim)?;
        let mut users = Vec::with_capacity(self.users);
        for (i, &label) in labels.iter().enumerate() {
            let id = format!("u{i:05}");
            let mut data = Vec::with_capacity(self.tweets_per_user * self.dim);
            for _ in 0..self.tweets_per_user {
                data.extend(self.point(label, &mut rng).into_iter().map(|x| x as f32));
            }
            store.insert(id.clone(), EmbeddingMatrix::new(self.tweets_per_user, self.dim, data)?)?;
            let aux = self.with_aux.then(|| self.counts(label, &mut rng));
            users.push(UserRecord {
                tweets: (0..self.tweets_per_user).map(|k| format!("post {k} from {id}")).collect(),
                user_id: id,
                aux,
                label: Some(label),
            });
        }
        Ok((Dataset::new("two-clusters", users)?, store))
    }

    fn counts(&self, label: Label, rng: &mut ChaCha8Rng) -> AuxCounts {
        let mut draw = |field: AuxField| {
            let z: f64 = rng.sample(StandardNormal);
            let centre = match (self.aux_signal, label) {
                (Some(f), Label::Bot) if f == field => 9.0,
                (Some(f), Label::Human) if f == field => 4.0,
                _ => 6.0,
            };
            (centre + 0.5 * z).exp().round() as u64
        };
        AuxCounts {
            followers: draw(AuxField::Followers),
            friends: draw(AuxField::Friends),
            statuses: draw(AuxField::Statuses),
            favorites: draw(AuxField::Favorites),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_seeded() {
        let clusters = TwoClusters { users: 20, ..TwoClusters::default() };
        let (f, labels) = clusters.features();
        assert_eq!(f.rows(), 20);
        assert_eq!(labels.iter().filter(|&&l| l == Label::Bot).count(), 10);
        assert_eq!(clusters.features(), (f, labels));
    }

    #[test]
    fn dataset_has_embeddings_for_everyone() {
        let clusters = TwoClusters { users: 12, tweets_per_user: 3, ..TwoClusters::default() };
        let (ds, store) = clusters.dataset().unwrap();
        assert!(ds.has_aux() && ds.has_labels());
        assert!(crate::ingest::validate_dataset(&ds, &store).ok);
        assert_eq!(store.get("u00003").unwrap().rows(), 3);
    }
}
