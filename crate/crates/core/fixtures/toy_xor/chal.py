from itertools import cycle

KEY = b"sandbox"

with open("flag.txt", "rb") as f:
    flag = f.read().strip()

enc = bytes(a ^ b for a, b in zip(flag, cycle(KEY)))
print(enc.hex())
