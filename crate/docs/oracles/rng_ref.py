"""Independent reference for the counter-based stream (used to freeze test values)."""
M = (1 << 64) - 1
def mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)
def block(key, stream, counter):
    z = ((key + counter * 0x9E3779B97F4A7C15) & M) ^ ((stream * 0xD1B54A32D192ED03) & M)
    return mix(mix(z))
class Rng:
    def __init__(s, key, stream): s.key, s.stream, s.c = key, stream, 0
    def u64(s):
        v = block(s.key, s.stream, s.c); s.c += 1; return v
    def uniform(s): return (s.u64() >> 11) * (1.0 / (1 << 53))
if __name__ == "__main__":
    r = Rng(42, 0)
    print([hex(r.u64()) for _ in range(3)])
    print(hex(block(7, 2, 5)))
