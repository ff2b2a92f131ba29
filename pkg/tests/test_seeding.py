from fedbal.seeding import MASK64, derive_seed, splitmix64


def test_splitmix64_reference_values():
    # First outputs of the reference splitmix64 generator seeded with 0.
    state = 0
    outputs = []
    for _ in range(3):
        outputs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & MASK64
    assert outputs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_derive_seed_is_pure_and_order_sensitive():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert derive_seed("train", 3) == derive_seed("train", 3)
    assert 0 <= derive_seed(2**70, -1) <= MASK64
