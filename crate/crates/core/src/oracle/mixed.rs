//! Fixed-probability routing between a reference and a substitute.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttemptError, ChatBackend, EndpointConfig, OracleError, OracleHandle, OracleResponse, RequestContext};

#[derive(Debug, Clone)]
pub struct MixedRoutingPolicy {
    /// Probability that a request is served by the substitute.
    pub pi: f64,
    pub reference: OracleHandle,
    pub substitute: OracleHandle,
    pub seed: u64,
}

impl MixedRoutingPolicy {
    pub fn identity(&self) -> String {
        format!(
            "mixed({} <- {} @ {})",
            self.reference.identity(),
            self.substitute.identity(),
            self.pi
        )
    }
}

pub struct MixedBackend {
    policy: MixedRoutingPolicy,
    served: Arc<AtomicU64>,
}

impl MixedBackend {
    pub fn new(policy: MixedRoutingPolicy) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&policy.pi) {
            return Err(OracleError::InvalidConfig(format!("pi must lie in [0, 1], got {}", policy.pi)));
        }
        Ok(Self {
            policy,
            served: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn substitute_counter(&self) -> Arc<AtomicU64> {
        self.served.clone()
    }

    /// Routing decision for one request: drawn from a stream seeded by the
    /// policy seed and the request's content hash.
    pub fn routes_to_substitute(&self, ctx: &RequestContext) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(self.policy.seed ^ ctx.key_u64().rotate_left(17));
        rng.random::<f64>() < self.policy.pi
    }
}

impl ChatBackend for MixedBackend {
    fn complete(
        &self,
        prompt: &str,
        config: &EndpointConfig,
        ctx: &RequestContext,
    ) -> Result<OracleResponse, AttemptError> {
        let target = if self.routes_to_substitute(ctx) {
            self.served.fetch_add(1, Ordering::SeqCst);
            &self.policy.substitute
        } else {
            &self.policy.reference
        };
        target.query_full(prompt, config).map_err(|e| match e {
            OracleError::RefusedByPolicy { status, message } => AttemptError::Refused { status, message },
            OracleError::ReplayMiss { key } => AttemptError::ReplayMiss { key },
            other => AttemptError::Transport {
                message: other.to_string(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn pure(name: &str, v: f64) -> OracleHandle {
        let ep = ScriptedEndpoint::from_prompts(name, [("q", v)], 0.0, 0);
        OracleHandle::scripted(ep).build()
    }

    fn mixed(pi: f64, seed: u64) -> OracleHandle {
        OracleHandle::mixed(MixedRoutingPolicy {
            pi,
            reference: pure("ref", 1.0),
            substitute: pure("sub", 2.0),
            seed,
        })
        .unwrap()
        .build()
    }

    #[test]
    fn degenerate_routing_equals_pure_backends() {
        let cfg = EndpointConfig::audit();
        let (m0, m1) = (mixed(0.0, 3), mixed(1.0, 3));
        for i in 0..50 {
            let p = format!("(1) q\n(2) extra {i}");
            assert_eq!(m0.query(&p, &cfg).unwrap(), pure("ref", 1.0).query(&p, &cfg).unwrap());
            assert_eq!(m1.query(&p, &cfg).unwrap(), pure("sub", 2.0).query(&p, &cfg).unwrap());
        }
        assert_eq!(m0.substitute_served(), Some(0));
        assert_eq!(m1.substitute_served(), Some(50));
    }

    #[test]
    fn routing_fraction_concentrates() {
        let h = mixed(0.5, 11);
        let cfg = EndpointConfig::audit();
        let n = 10_000;
        for _ in 0..n {
            h.query("(1) q", &cfg).unwrap();
        }
        let frac = h.substitute_served().unwrap() as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25f64 / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn same_seed_same_decisions() {
        let cfg = EndpointConfig::audit();
        let run = |seed| {
            let h = mixed(0.3, seed);
            (0..200).map(|_| h.query("(1) q", &cfg).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
        assert!(OracleHandle::mixed(MixedRoutingPolicy {
            pi: 1.5,
            reference: pure("a", 0.0),
            substitute: pure("b", 0.0),
            seed: 0
        })
        .is_err());
    }
}
