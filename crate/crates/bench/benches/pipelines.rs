use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use chainshare_bench::{run_sale, sale_world};
use chainshare_core::chain::merkle_root;
use chainshare_core::crypto::{
    decrypt_item, encrypt_item, providers::DeterministicProvider, providers::StandardProvider,
    CryptoProvider, SymmetricKey,
};
use chainshare_core::digest::Digest;
use chainshare_core::escrow::{gas::GasSchedule, EscrowEnv, Role, DEFAULT_GAS_LIMIT, DEFAULT_GAS_PRICE_WEI};
use chainshare_core::types::Address;

fn bench_merkle(c: &mut Criterion) {
    let mut group = c.benchmark_group("merkle_root");
    for n in [16usize, 256, 1024] {
        let leaves: Vec<Digest> = (0..n)
            .map(|i| Digest::of(&(i as u64).to_be_bytes()))
            .collect();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_function(format!("{n}_leaves"), |b| {
            b.iter(|| merkle_root(std::hint::black_box(&leaves)))
        });
    }
    group.finish();
}

fn bench_chunk_pipeline(c: &mut Criterion) {
    let data = vec![0xa7u8; 64 * 1024];
    let chunk_size = 4096;
    let nonce_seed = [9u8; 8];

    let mut group = c.benchmark_group("chunk_pipeline_64k");
    group.throughput(Throughput::Bytes(data.len() as u64));

    let det = DeterministicProvider;
    let key = SymmetricKey {
        bytes: [0x11; 32],
        item_id: chainshare_core::crypto::content_hash(&data),
    };
    group.bench_function("deterministic_encrypt", |b| {
        b.iter(|| encrypt_item(&det, &key, std::hint::black_box(&data), chunk_size, &nonce_seed))
    });
    let encrypted = encrypt_item(&det, &key, &data, chunk_size, &nonce_seed).unwrap();
    group.bench_function("deterministic_decrypt", |b| {
        b.iter(|| decrypt_item(&det, &key, std::hint::black_box(&encrypted.chunks)))
    });

    let std_provider = StandardProvider::default();
    group.bench_function("aes_gcm_encrypt", |b| {
        b.iter(|| {
            encrypt_item(
                &std_provider,
                &key,
                std::hint::black_box(&data),
                chunk_size,
                &nonce_seed,
            )
        })
    });
    let encrypted_std = encrypt_item(&std_provider, &key, &data, chunk_size, &nonce_seed).unwrap();
    group.bench_function("aes_gcm_decrypt", |b| {
        b.iter(|| decrypt_item(&std_provider, &key, std::hint::black_box(&encrypted_std.chunks)))
    });
    group.finish();
}

fn bench_escrow_lifecycle(c: &mut Criterion) {
    c.bench_function("escrow_deploy_pay_settle", |b| {
        let owner = Address([1; 20]);
        let buyer = Address([2; 20]);
        b.iter_batched(
            || {
                let mut env = EscrowEnv::new(
                    GasSchedule::default_schedule(),
                    DEFAULT_GAS_PRICE_WEI,
                    DEFAULT_GAS_LIMIT,
                );
                env.registry.register(owner, Role::Owner, b"o").unwrap();
                env.registry.register(buyer, Role::Consumer, b"c").unwrap();
                env.fund(owner, 1_000_000);
                env.fund(buyer, 1_000_000);
                env
            },
            |mut env| {
                let c = env
                    .deploy_contract(owner, 1000, Digest::of(b"item"))
                    .unwrap();
                env.consumer_pay(c, buyer).unwrap();
                env.record_delivery(c, buyer).unwrap();
                env.confirm_delivery(c, buyer).unwrap();
                env
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_full_sale(c: &mut Criterion) {
    let data = vec![0x5eu8; 16 * 1024];
    c.bench_function("world_full_sale_16k", |b| {
        let mut seed = 0u64;
        b.iter_batched(
            || {
                seed += 1;
                sale_world(seed, 4096)
            },
            |mut w| {
                let plaintext = run_sale(&mut w, &data, 1000);
                assert_eq!(plaintext.len(), data.len());
                w
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_merkle,
    bench_chunk_pipeline,
    bench_escrow_lifecycle,
    bench_full_sale
);
criterion_main!(benches);
